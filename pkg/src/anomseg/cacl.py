"""Cross-domain anomaly-aware contrastive learning.

Decoder features are projected to unit-norm 128-d pixel embeddings. Every
pixel of a training image is split by ground truth (anomaly / normal) and
by the current prediction (easy = correctly classified, hard =
misclassified). Anchors are anomaly pixels of one domain, positives are
anomaly pixels pooled over both domains, negatives are normal pixels of
the anchor's own domain. The loss averages, over anchors and positives,

    exp(a.p / alpha) / (exp(a.p / alpha) + sum_n exp(a.n / alpha))

and negates the sum of the per-domain terms, so it lies in (-2, 0].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError

EMBED_DIM = 128
HIDDEN_DIM = 64
IGNORE_LABEL = 255


class Projector(nn.Module):
    """1x1 conv (64) -> ReLU -> 1x1 conv (128), then per-pixel L2 normalization."""

    def __init__(self, in_channels: int, hidden: int = HIDDEN_DIM, out: int = EMBED_DIM):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, hidden, 1)
        self.conv2 = nn.Conv2d(hidden, out, 1)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        z = self.conv2(F.relu(self.conv1(feats)))
        return safe_normalize(z, dim=1)

    def project_vectors(self, x: torch.Tensor) -> torch.Tensor:
        """Same map applied to gathered pixel features of shape (M, C)."""
        h = F.relu(F.linear(x, self.conv1.weight.flatten(1), self.conv1.bias))
        z = F.linear(h, self.conv2.weight.flatten(1), self.conv2.bias)
        return safe_normalize(z, dim=1)


def safe_normalize(z: torch.Tensor, dim: int, eps: float = 1e-12) -> torch.Tensor:
    """L2-normalize along ``dim``; zero vectors map to the first basis vector."""
    norm = z.norm(dim=dim, keepdim=True)
    unit = z / norm.clamp_min(eps)
    basis = torch.zeros_like(z)
    basis.narrow(dim, 0, 1).fill_(1.0)
    return torch.where(norm > eps, unit, basis)


def project(projector: Projector, decoder_features: torch.Tensor) -> torch.Tensor:
    return projector(decoder_features)


@dataclass
class PixelPartition:
    """Flat pixel indices of one image, split by label and hardness."""

    hard_anomaly: np.ndarray
    easy_anomaly: np.ndarray
    hard_normal: np.ndarray
    easy_normal: np.ndarray

    @property
    def anomaly(self) -> np.ndarray:
        return np.concatenate([self.hard_anomaly, self.easy_anomaly])

    @property
    def normal(self) -> np.ndarray:
        return np.concatenate([self.hard_normal, self.easy_normal])


def partition_pixels(gt_map, pred_prob, threshold: float = 0.5) -> PixelPartition:
    gt = np.asarray(gt_map).ravel()
    prob = np.asarray(pred_prob, dtype=float).ravel()
    if gt.shape != prob.shape:
        raise ValueError(f"gt {np.shape(gt_map)} and prediction {np.shape(pred_prob)} differ")
    predicted_anomaly = prob > threshold
    anomaly, normal = gt == 1, gt == 0
    return PixelPartition(
        hard_anomaly=np.flatnonzero(anomaly & ~predicted_anomaly),
        easy_anomaly=np.flatnonzero(anomaly & predicted_anomaly),
        hard_normal=np.flatnonzero(normal & predicted_anomaly),
        easy_normal=np.flatnonzero(normal & ~predicted_anomaly),
    )


@dataclass(frozen=True)
class SamplingBudget:
    n_anchor: int = 50
    pos_mult: int = 2
    hard_neg_mult: int = 2
    easy_neg_mult: int = 6
    alpha: float = 0.1

    def __post_init__(self):
        for name in ("n_anchor", "n_positive", "n_hard_negative", "n_easy_negative"):
            if getattr(self, name) < 1:
                raise ConfigError(f"sampling budget {name} must be >= 1")
        if self.alpha <= 0:
            raise ConfigError(f"temperature alpha must be > 0, got {self.alpha}")

    @property
    def n_positive(self) -> int:
        return self.pos_mult * self.n_anchor

    @property
    def n_hard_negative(self) -> int:
        return self.hard_neg_mult * self.n_anchor

    @property
    def n_easy_negative(self) -> int:
        return self.easy_neg_mult * self.n_anchor


@dataclass
class PixelSet:
    image: np.ndarray  # batch index
    pixel: np.ndarray  # flat pixel index
    domain: np.ndarray  # 'V' / 'A'
    hard: np.ndarray  # bool
    label: np.ndarray  # 1 anomaly, 0 normal

    def __len__(self):
        return len(self.image)

    @classmethod
    def empty(cls) -> "PixelSet":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, "<U1"), np.zeros(0, bool),
                   np.zeros(0, np.int64))

    def keys(self) -> set:
        return set(zip(self.image.tolist(), self.pixel.tolist()))


@dataclass
class SampleSets:
    anchors: dict  # domain -> PixelSet
    positives: dict  # domain -> PixelSet contrasted with that domain's anchors
    negatives: dict  # domain -> PixelSet
    skipped: list = field(default_factory=list)  # domains whose anchor set is empty

    @property
    def positives_union(self) -> PixelSet:
        return self.positives["V"]


class _Pool:
    """Candidate pixels gathered over several images."""

    def __init__(self, parts):
        # parts: list of (image index, domain, flat pixel array, hard flag, label)
        self.image = np.concatenate([np.full(len(p), i, np.int64) for i, _, p, _, _ in parts] or [np.zeros(0, np.int64)])
        self.pixel = np.concatenate([p.astype(np.int64) for _, _, p, _, _ in parts] or [np.zeros(0, np.int64)])
        self.domain = np.concatenate([np.full(len(p), d, "<U1") for _, d, p, _, _ in parts] or [np.zeros(0, "<U1")])
        self.hard = np.concatenate([np.full(len(p), h, bool) for _, _, p, h, _ in parts] or [np.zeros(0, bool)])
        self.label = np.concatenate([np.full(len(p), y, np.int64) for _, _, p, _, y in parts] or [np.zeros(0, np.int64)])

    def __len__(self):
        return len(self.image)

    def take(self, idx) -> PixelSet:
        return PixelSet(self.image[idx], self.pixel[idx], self.domain[idx], self.hard[idx], self.label[idx])


def _draw(n_avail: int, k: int, rng) -> np.ndarray:
    k = min(k, n_avail)
    if k == 0:
        return np.zeros(0, np.int64)
    return np.sort(rng.choice(n_avail, size=k, replace=False))


def _split_quota(n_hard: int, n_easy: int, want_hard: int, want_easy: int) -> tuple[int, int]:
    """Hard/easy counts honoring the targets, moving any deficit to the other pool."""
    take_h, take_e = min(want_hard, n_hard), min(want_easy, n_easy)
    total = want_hard + want_easy
    if take_h < want_hard:
        take_e = min(n_easy, total - take_h)
    if take_e < want_easy:
        take_h = min(n_hard, total - take_e)
    return take_h, take_e


def _concat(a: PixelSet, b: PixelSet) -> PixelSet:
    return PixelSet(*(np.concatenate([getattr(a, f), getattr(b, f)]) for f in ("image", "pixel", "domain", "hard", "label")))


def _stratified(hard: _Pool, easy: _Pool, want_hard: int, want_easy: int, rng) -> PixelSet:
    take_h, take_e = _split_quota(len(hard), len(easy), want_hard, want_easy)
    return _concat(hard.take(_draw(len(hard), take_h, rng)), easy.take(_draw(len(easy), take_e, rng)))


def build_sample_sets(partitions, domains, budget: SamplingBudget, rng: np.random.Generator,
                      anomaly_aware: bool = True, cross_domain: bool = True,
                      positives_opposite: bool = False) -> SampleSets:
    """Draw anchor, positive and negative pixel sets for one batch.

    Per domain: up to ``n_anchor`` anchors from that domain's anomaly
    pixels and ``n_hard_negative + n_easy_negative`` negatives from its
    normal pixels. Positives (``n_positive``) come from anomaly pixels of
    both domains pooled (``cross_domain``), of the anchor's own domain
    (``cross_domain=False``), or of the other domain only
    (``positives_opposite``).

    With ``anomaly_aware`` the anchors are split half hard / half easy and
    negatives follow the hard/easy budget, a shortfall in one pool being
    filled from the other; otherwise draws are uniform. All draws are
    without replacement.
    """
    domains = list(domains)
    if len(partitions) != len(domains):
        raise ValueError("one partition per batch image is required")
    if not {"V", "A"} <= set(domains):
        raise ValueError("contrastive sampling needs both domains V and A in the batch")

    def pool(domain_filter, which):
        parts = []
        for i, (part, d) in enumerate(zip(partitions, domains)):
            if d not in domain_filter:
                continue
            for name, hard, label in which:
                parts.append((i, d, getattr(part, name), hard, label))
        return _Pool(parts)

    hard_anom = [("hard_anomaly", True, 1)]
    easy_anom = [("easy_anomaly", False, 1)]
    all_anom = hard_anom + easy_anom
    hard_norm = [("hard_normal", True, 0)]
    easy_norm = [("easy_normal", False, 0)]

    anchors, negatives, positives, skipped = {}, {}, {}, []
    for d in ("V", "A"):
        if anomaly_aware:
            half = budget.n_anchor // 2
            anchors[d] = _stratified(pool({d}, hard_anom), pool({d}, easy_anom), half, budget.n_anchor - half, rng)
        else:
            p = pool({d}, all_anom)
            anchors[d] = p.take(_draw(len(p), budget.n_anchor, rng))
        if len(anchors[d]) == 0:
            skipped.append(d)
    for d in ("V", "A"):
        if anomaly_aware:
            negatives[d] = _stratified(pool({d}, hard_norm), pool({d}, easy_norm),
                                       budget.n_hard_negative, budget.n_easy_negative, rng)
        else:
            p = pool({d}, hard_norm + easy_norm)
            negatives[d] = p.take(_draw(len(p), budget.n_hard_negative + budget.n_easy_negative, rng))
    if cross_domain and not positives_opposite:
        p = pool({"V", "A"}, all_anom)
        shared = p.take(_draw(len(p), budget.n_positive, rng))
        positives = {"V": shared, "A": shared}
    else:
        for d in ("V", "A"):
            source = {"A" if d == "V" else "V"} if positives_opposite else {d}
            p = pool(source, all_anom)
            positives[d] = p.take(_draw(len(p), budget.n_positive, rng))
    return SampleSets(anchors, positives, negatives, skipped)


def gather_embeddings(sets: SampleSets, decoder_features: torch.Tensor, projector: Projector) -> dict:
    """Project only the sampled pixels. Returns {'anchors': {d: T}, 'positives': ..., 'negatives': ...}."""
    flat = decoder_features.flatten(2)  # N x C x HW

    def emb(ps: PixelSet):
        if len(ps) == 0:
            return decoder_features.new_zeros((0, projector.conv2.out_channels))
        x = flat[torch.from_numpy(ps.image), :, torch.from_numpy(ps.pixel)]
        return projector.project_vectors(x)

    out = {"anchors": {}, "positives": {}, "negatives": {}}
    for d in ("V", "A"):
        out["anchors"][d] = emb(sets.anchors[d])
        out["negatives"][d] = emb(sets.negatives[d])
    if sets.positives["V"] is sets.positives["A"]:
        shared = emb(sets.positives["V"])
        out["positives"] = {"V": shared, "A": shared}
    else:
        out["positives"] = {d: emb(sets.positives[d]) for d in ("V", "A")}
    return out


def _domain_term(a, p, n, alpha, log_variant):
    sp = a @ p.T / alpha  # anchors x positives
    sn = a @ n.T / alpha  # anchors x negatives
    if n.shape[0]:
        mx = torch.maximum(sp.max(1, keepdim=True).values, sn.max(1, keepdim=True).values).detach()
        neg = torch.exp(sn - mx).sum(1, keepdim=True)
    else:
        mx = sp.max(1, keepdim=True).values.detach()
        neg = torch.zeros_like(mx)
    ep = torch.exp(sp - mx)
    if log_variant:
        log_neg = torch.log(neg) if n.shape[0] else torch.full_like(neg, -torch.inf)
        ratio = sp - mx - torch.logaddexp(sp - mx, log_neg)
    else:
        ratio = ep / (ep + neg)
    return ratio.mean()


def cac_loss(anchors: dict, positives: dict, negatives: dict, alpha: float = 0.1,
             log_variant: bool = False) -> torch.Tensor:
    """Contrastive loss over per-domain anchors.

    ``anchors``, ``positives`` and ``negatives`` map domain -> (M, D)
    embeddings. A domain with no anchors is skipped. ``log_variant``
    replaces each ratio by its logarithm (InfoNCE form).
    """
    if alpha <= 0:
        raise ConfigError(f"temperature alpha must be > 0, got {alpha}")
    total = None
    for d in ("V", "A"):
        a = anchors.get(d)
        if a is None or a.shape[0] == 0:
            continue
        p = positives[d]
        if p.shape[0] == 0:
            raise ValueError(f"positive set for domain {d} is empty")
        term = _domain_term(a, p, negatives[d], alpha, log_variant)
        total = -term if total is None else total - term
    if total is None:
        ref = next((t for t in positives.values() if t is not None), None)
        return ref.new_zeros(()) if ref is not None else torch.zeros(())
    return total
