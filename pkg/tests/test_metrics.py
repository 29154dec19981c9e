import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anomseg.errors import UndefinedMetricError
from anomseg.metrics import (EvalPair, average_precision, evaluate, fpr_at_95_tpr, operating_points, pooled, pr_curve,
                           roc_curve)
from oracles import ap_bruteforce, fpr95_bruteforce


def test_perfect_separation():
    scores = np.array([0.9, 0.8, 0.2, 0.1])
    labels = np.array([1, 1, 0, 0])
    assert average_precision([(scores, labels)]) == 1.0
    assert fpr_at_95_tpr([(scores, labels)]) == 0.0


def test_worked_example_with_ignore():
    scores = np.array([0.9, 0.8, 0.7, 0.6, 0.5, 0.4])
    labels = np.array([1, 0, 255, 1, 0, 0])
    # distinct thresholds: 0.9 (tp1 fp0), 0.8 (1,1), 0.6 (2,1), ...
    assert average_precision([(scores, labels)]) == pytest.approx(0.5 * 1 + 0.5 * (2 / 3), abs=0)
    assert fpr_at_95_tpr([(scores, labels)]) == pytest.approx(1 / 3)


def test_all_tied_scores():
    scores = np.full(10, 0.3)
    labels = np.array([1, 1, 1, 0, 0, 0, 0, 0, 0, 0])
    assert average_precision([(scores, labels)]) == pytest.approx(0.3)
    assert fpr_at_95_tpr([(scores, labels)]) == 1.0


def test_undefined_metrics_raise():
    with pytest.raises(UndefinedMetricError):
        average_precision([(np.ones(4), np.zeros(4, int))])
    with pytest.raises(UndefinedMetricError):
        fpr_at_95_tpr([(np.ones(4), np.ones(4, int))])
    with pytest.raises(UndefinedMetricError):
        average_precision([(np.ones(3), np.full(3, 255))])


def test_bad_labels_rejected():
    with pytest.raises(ValueError):
        EvalPair(np.zeros(3), np.array([0, 1, 2]))
    with pytest.raises(ValueError):
        EvalPair(np.zeros(3), np.zeros(4, int))


def test_pooling_is_concatenation(rng):
    pairs = [EvalPair(rng.random((4, 5)), rng.choice([0, 1, 255], (4, 5))) for _ in range(3)]
    s, y = pooled(pairs)
    assert set(np.unique(y)) <= {0, 1}
    assert len(s) == sum(int((p.labels != 255).sum()) for p in pairs)
    one = EvalPair(np.concatenate([p.scores.ravel() for p in pairs]), np.concatenate([p.labels.ravel() for p in pairs]))
    if 0 < y.sum() < len(y):
        assert average_precision(pairs) == average_precision([one])


def test_operating_points_cumulative():
    thr, tp, fp = operating_points(np.array([0.5, 0.9, 0.5, 0.1]), np.array([1, 0, 0, 1]))
    assert thr.tolist() == [0.9, 0.5, 0.1]
    assert tp.tolist() == [0, 1, 2]
    assert fp.tolist() == [1, 2, 2]


def test_curves_endpoints(rng):
    s = rng.random(200)
    y = (rng.random(200) < 0.3).astype(int)
    prec, rec, thr = pr_curve([(s, y)])
    assert rec[-1] == 1.0 and np.all(np.diff(rec) >= 0)
    fpr, tpr, _ = roc_curve([(s, y)])
    assert fpr[-1] == 1.0 and tpr[-1] == 1.0


labels_st = st.lists(st.sampled_from([0, 1, 255]), min_size=2, max_size=60)


@settings(max_examples=150, deadline=None)
@given(labels=labels_st, data=st.data())
def test_matches_bruteforce(labels, data):
    y = np.array(labels)
    valid = y[y != 255]
    if not (valid == 1).any() or not (valid == 0).any():
        return
    # coarse score grid forces ties
    s = np.array(data.draw(st.lists(st.integers(0, 5), min_size=len(y), max_size=len(y)))) / 5.0
    assert average_precision([(s, y)]) == ap_bruteforce(s, y)
    assert fpr_at_95_tpr([(s, y)]) == fpr95_bruteforce(s, y)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_invariant_under_monotone_transform(seed):
    r = np.random.default_rng(seed)
    s = r.random(300)
    y = (r.random(300) < 0.2).astype(int)
    y[0], y[1] = 1, 0
    t = np.exp(3 * s) - 7.0
    assert average_precision([(s, y)]) == average_precision([(t, y)])
    assert fpr_at_95_tpr([(s, y)]) == fpr_at_95_tpr([(t, y)])


def test_ap_bounds(rng):
    for _ in range(20):
        s = rng.random(100)
        y = (rng.random(100) < 0.4).astype(int)
        y[:2] = [1, 0]
        ap = average_precision([(s, y)])
        assert y.mean() * 0.2 <= ap <= 1.0
        assert 0.0 <= fpr_at_95_tpr([(s, y)]) <= 1.0


def test_evaluate_report(small_dataset):
    from anomseg.trainer import OraclePredictor
    rep = evaluate(OraclePredictor(), small_dataset)
    assert rep.ap == 1.0 and rep.fpr95 == 0.0
    assert rep.per_image == sorted(rep.per_image, key=lambda r: r["image"])
    doc = json.loads(rep.to_json())
    assert doc["ap"] == 1.0
    assert rep.summary()["ap_pct"] == "100.00"
    assert rep.to_csv().splitlines()[0].startswith("image")


def test_evaluate_callable_and_empty(small_dataset):
    rep = evaluate(lambda s: np.zeros(s.gt_map.shape), small_dataset[:4])
    assert math.isclose(rep.fpr95, 1.0)
    with pytest.raises(UndefinedMetricError):
        evaluate(lambda s: s.gt_map, [])
