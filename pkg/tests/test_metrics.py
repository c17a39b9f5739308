"""AUC / logloss / slice reports vs brute-force oracles."""

import numpy as np
import pytest

from dgctr import metrics, model
from dgctr.data import Instance
from dgctr.metrics import (
    MetricError,
    auc,
    eval_logloss,
    evaluate,
    slice_by_behavior_length,
    slice_by_feature_frequency,
)

from oracles import pairwise_auc


def test_auc_perfect_ranking():
    assert auc([0.9, 0.1], [1, 0]) == 1.0


def test_auc_all_ties_is_half():
    assert auc([0.3, 0.3, 0.3, 0.3], [1, 0, 1, 0]) == 0.5


def test_auc_matches_pairwise_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = 200
        scores = np.round(rng.random(n), 2)  # coarse grid forces ties
        labels = rng.integers(0, 2, n)
        if labels.sum() in (0, n):
            continue
        assert abs(auc(scores, labels) - pairwise_auc(scores, labels)) < 1e-12


def test_auc_single_class_rejected():
    with pytest.raises(MetricError, match="undefined"):
        auc([0.1, 0.9], [1, 1])


def test_auc_invariant_under_monotone_transform():
    rng = np.random.default_rng(1)
    scores = rng.random(80)
    labels = rng.integers(0, 2, 80)
    base = auc(scores, labels)
    assert auc(np.exp(4 * scores) + 7, labels) == pytest.approx(base, abs=1e-12)
    assert auc(np.log(scores + 1e-9), labels) == pytest.approx(base, abs=1e-12)


def test_auc_complement_identity():
    rng = np.random.default_rng(2)
    scores = rng.permutation(60) / 60.0  # tie-free
    labels = rng.integers(0, 2, 60)
    labels[0], labels[1] = 0, 1
    assert auc(scores, labels) + auc(scores, 1 - labels) == pytest.approx(
        1.0, abs=1e-12
    )


def test_metric_logloss_equals_model_logloss():
    rng = np.random.default_rng(3)
    preds = rng.uniform(0.01, 0.99, 300)
    labels = rng.integers(0, 2, 300)
    assert abs(eval_logloss(preds, labels) - model.logloss(preds, labels)) < 1e-12


def _inst(user=0, item=1, uattrs=(), iattrs=(), behaviors=(), ctx=(), label=1):
    return Instance(user, item, tuple(uattrs), tuple(iattrs),
                    tuple(behaviors), tuple(ctx), label)


def test_frequency_slice_routes_low_frequency_instance():
    freq = np.zeros(10, dtype=np.int64)
    freq[0], freq[1] = 200, 5  # user frequent, item rare
    insts = [_inst(user=0, item=1)]
    rep = slice_by_feature_frequency(insts, [0.8], [1], freq)
    assert rep.slices["[1,10)"].count == 1
    assert rep.slices["[10,100)"].count == 0
    assert rep.slices["[100,inf)"].count == 1  # the frequent user feature


def test_frequency_slice_high_only_instance():
    freq = np.full(10, 500, dtype=np.int64)
    insts = [_inst(user=0, item=1)]
    rep = slice_by_feature_frequency(insts, [0.8], [1], freq)
    assert rep.slices["[1,10)"].count == 0
    assert rep.slices["[100,inf)"].count == 1


def test_frequency_slice_matches_bruteforce_scan():
    rng = np.random.default_rng(4)
    freq = rng.integers(0, 300, 40).astype(np.int64)
    insts = []
    for _ in range(50):
        feats = rng.choice(40, size=4, replace=False)
        insts.append(
            _inst(
                user=int(feats[0]),
                item=int(feats[1]),
                uattrs=(int(feats[2]),),
                ctx=(int(feats[3]),),
                label=int(rng.integers(0, 2)),
            )
        )
    scores = rng.random(50)
    labels = np.array([i.label for i in insts])
    rep = slice_by_feature_frequency(insts, scores, labels, freq)
    buckets = [(1, 10), (10, 100), (100, float("inf"))]
    for lo, hi in buckets:
        expect = [
            b
            for b, inst in enumerate(insts)
            if any(
                lo <= freq[f] < hi
                for f in [inst.user, inst.item] + list(inst.user_attrs)
                + list(inst.context)
            )
        ]
        name = f"[{lo},{'inf' if hi == float('inf') else int(hi)})"
        assert rep.slices[name].count == len(expect)


def test_behavior_length_slice_boundaries():
    insts = [
        _inst(behaviors=tuple(range(3)), label=1),   # [1,5)
        _inst(behaviors=tuple(range(20)), label=0),  # [20,inf), boundary
        _inst(behaviors=tuple(range(19)), label=1),  # [5,20)
    ]
    rep = slice_by_behavior_length(insts, [0.5, 0.5, 0.5], [1, 0, 1])
    assert rep.slices["[1,5)"].count == 1
    assert rep.slices["[5,20)"].count == 1
    assert rep.slices["[20,inf)"].count == 1


def test_behavior_length_slice_matches_scan():
    rng = np.random.default_rng(5)
    insts = [
        _inst(behaviors=tuple(range(int(rng.integers(1, 30)))),
              label=int(rng.integers(0, 2)))
        for _ in range(50)
    ]
    scores = rng.random(50)
    labels = np.array([i.label for i in insts])
    rep = slice_by_behavior_length(insts, scores, labels)
    for (lo, hi), name in [((1, 5), "[1,5)"), ((5, 20), "[5,20)"),
                           ((20, float("inf")), "[20,inf)")]:
        expect = sum(1 for i in insts if lo <= len(i.behaviors) < hi)
        assert rep.slices[name].count == expect


def test_slice_counts_sum_to_parent_for_partition():
    # behavior-length buckets partition the instances
    rng = np.random.default_rng(6)
    insts = [
        _inst(behaviors=tuple(range(int(rng.integers(1, 40)))),
              label=int(rng.integers(0, 2)))
        for _ in range(60)
    ]
    scores = rng.random(60)
    labels = np.array([i.label for i in insts])
    rep = slice_by_behavior_length(insts, scores, labels)
    assert sum(s.count for s in rep.slices.values()) == rep.count


def test_empty_bucket_reported_not_error():
    insts = [_inst(behaviors=(1, 2, 3), label=1),
             _inst(behaviors=(1, 2), label=0)]
    rep = slice_by_behavior_length(insts, [0.6, 0.4], [1, 0])
    empty = rep.slices["[20,inf)"]
    assert empty.count == 0
    assert empty.auc is None and empty.logloss is None


def test_single_class_slice_has_null_auc():
    insts = [_inst(behaviors=(1,), label=1)]
    rep = slice_by_behavior_length(insts, [0.6], [1])
    s = rep.slices["[1,5)"]
    assert s.count == 1 and s.auc is None and s.logloss is not None


def test_report_json_and_table():
    rep = evaluate([0.8, 0.3], [1, 0])
    doc = rep.to_dict()
    assert doc["auc"] == 1.0 and doc["n_pos"] == 1
    rep2 = slice_by_behavior_length(
        [_inst(behaviors=(1, 2), label=1), _inst(behaviors=(1,), label=0)],
        [0.7, 0.2],
        [1, 0],
    )
    table = metrics.slice_table(rep2)
    assert table.startswith("bucket\tcount")
    assert "[1,5)" in table
