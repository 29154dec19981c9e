"""Pixel-level AP and FPR95 with ignore-label handling.

Pixels labelled 255 are dropped before anything else. Remaining pixels
are pooled over all images, sorted by score, and pixels sharing a score
form a single operating point (no order dependence on ties).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UndefinedMetricError

IGNORE_LABEL = 255
TPR_TARGET_PCT = 95


@dataclass
class EvalPair:
    scores: np.ndarray
    labels: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.scores.shape != self.labels.shape:
            raise ValueError(f"scores {self.scores.shape} and labels {self.labels.shape} differ in shape")
        bad = np.setdiff1d(np.unique(self.labels), [0, 1, IGNORE_LABEL])
        if bad.size:
            raise ValueError(f"labels must be in {{0, 1, 255}}, found {bad.tolist()}")


def _as_pairs(pairs):
    if isinstance(pairs, EvalPair):
        return [pairs]
    return [p if isinstance(p, EvalPair) else EvalPair(*p) for p in pairs]


def pooled(pairs) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate the non-ignored pixels of all pairs -> (scores, labels in {0,1})."""
    pairs = _as_pairs(pairs)
    scores = [p.scores.ravel()[p.labels.ravel() != IGNORE_LABEL] for p in pairs]
    labels = [p.labels.ravel()[p.labels.ravel() != IGNORE_LABEL] for p in pairs]
    if not scores:
        return np.zeros(0), np.zeros(0, np.int64)
    return np.concatenate(scores), np.concatenate(labels).astype(np.int64)


def operating_points(scores: np.ndarray, labels: np.ndarray):
    """Cumulative (threshold, TP, FP) at each distinct score, highest first."""
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    return s[last], tp, fp


def _ap(scores, labels) -> float:
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError("average precision undefined: no positive pixels")
    _, tp, fp = operating_points(scores, labels)
    dtp = np.diff(np.r_[0, tp])
    terms = (dtp / n_pos) * (tp / (tp + fp))
    return math.fsum(terms.tolist())


def _fpr95(scores, labels) -> float:
    n_pos = int(labels.sum())
    n_neg = int(len(labels) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"FPR95 undefined: need positive and negative pixels, got {n_pos} positive / {n_neg} negative"
        )
    _, tp, fp = operating_points(scores, labels)
    # integer comparison avoids float rounding at exactly 95 %
    first = int(np.flatnonzero(tp * 100 >= TPR_TARGET_PCT * n_pos)[0])
    return float(fp[first] / n_neg)


def average_precision(pairs) -> float:
    return _ap(*pooled(pairs))


def fpr_at_95_tpr(pairs) -> float:
    return _fpr95(*pooled(pairs))


def pr_curve(pairs):
    """(precision, recall, thresholds) at every distinct score."""
    scores, labels = pooled(pairs)
    thr, tp, fp = operating_points(scores, labels)
    return tp / (tp + fp), tp / max(int(labels.sum()), 1), thr


def roc_curve(pairs):
    """(fpr, tpr, thresholds) at every distinct score."""
    scores, labels = pooled(pairs)
    thr, tp, fp = operating_points(scores, labels)
    n_pos = max(int(labels.sum()), 1)
    n_neg = max(int(len(labels) - labels.sum()), 1)
    return fp / n_neg, tp / n_pos, thr


@dataclass
class EvalReport:
    ap: float
    fpr95: float
    positives: int
    negatives: int
    ignored: int
    per_image: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "ap": self.ap,
            "fpr95": self.fpr95,
            "ap_pct": f"{100 * self.ap:.2f}",
            "fpr95_pct": f"{100 * self.fpr95:.2f}",
            "positives": self.positives,
            "negatives": self.negatives,
            "ignored": self.ignored,
        }

    def to_json(self) -> str:
        return json.dumps({**self.summary(), "per_image": self.per_image}, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["image", "domain", "ap_pct", "fpr95_pct", "positives", "negatives", "ignored"])
        s = self.summary()
        w.writerow(["ALL", "", s["ap_pct"], s["fpr95_pct"], self.positives, self.negatives, self.ignored])
        for row in self.per_image:
            w.writerow([row["image"], row["domain"], _pct(row["ap"]), _pct(row["fpr95"]),
                        row["positives"], row["negatives"], row["ignored"]])
        return buf.getvalue()


def _pct(x):
    return "" if x is None else f"{100 * x:.2f}"


def _maybe(fn, scores, labels):
    try:
        return fn(scores, labels)
    except UndefinedMetricError:
        return None


def predict_scores(model, samples) -> list:
    if hasattr(model, "predict"):
        return list(model.predict(samples))
    return [model(s) for s in samples]


def evaluate(model, samples) -> EvalReport:
    """Pooled AP / FPR95 of ``model`` over ``samples`` plus a per-image table.

    ``model`` is either a callable mapping a sample to an H x W score map
    or an object with a batch ``predict(samples)`` method.
    """
    samples = list(samples)
    if not samples:
        raise UndefinedMetricError("cannot evaluate an empty dataset")
    scores = predict_scores(model, samples)
    pairs = [EvalPair(sc, s.gt_map, s.sample_id) for sc, s in zip(scores, samples)]
    rows = []
    for s, p in zip(samples, pairs):
        sc, lb = pooled([p])
        rows.append({
            "image": s.sample_id,
            "domain": s.domain,
            "ap": _maybe(_ap, sc, lb),
            "fpr95": _maybe(_fpr95, sc, lb),
            "positives": int((p.labels == 1).sum()),
            "negatives": int((p.labels == 0).sum()),
            "ignored": int((p.labels == IGNORE_LABEL).sum()),
        })
    rows.sort(key=lambda r: (r["image"], r["domain"]))
    sc, lb = pooled(pairs)
    try:
        ap, fpr = _ap(sc, lb), _fpr95(sc, lb)
    except UndefinedMetricError as exc:
        raise UndefinedMetricError(f"dataset of {len(samples)} images: {exc}") from exc
    return EvalReport(
        ap=ap,
        fpr95=fpr,
        positives=sum(r["positives"] for r in rows),
        negatives=sum(r["negatives"] for r in rows),
        ignored=sum(r["ignored"] for r in rows),
        per_image=rows,
    )
