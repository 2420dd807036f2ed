import math

import numpy as np
import pytest

from rlfwarn.balance import (
    SYNTHETIC_TRACE_ID,
    BalanceConfig,
    BalanceError,
    apply_balance,
    class_weights,
    downsample,
    smote,
)
from conftest import toy_dataset


def imbalanced(n_pos, n_neg, dims=3, seed=0):
    gen = np.random.default_rng(seed)
    x = np.vstack([gen.normal(2.0, 1.0, (n_pos, dims)),
                   gen.normal(-2.0, 1.0, (n_neg, dims))])
    y = np.array([1] * n_pos + [0] * n_neg)
    return toy_dataset(x, y)


def test_downsample_hits_target_ratio():
    ds = downsample(imbalanced(10, 5000), ratio=30, seed=1)
    assert ds.positive_count() == 10
    assert ds.negative_count() == 300


def test_downsample_keeps_small_datasets_intact():
    before = imbalanced(10, 100)
    after = downsample(before, ratio=30, seed=1)
    assert after.positive_count() == 10
    assert after.negative_count() == 100


def test_downsample_is_deterministic():
    a = downsample(imbalanced(5, 500), ratio=10, seed=7)
    b = downsample(imbalanced(5, 500), ratio=10, seed=7)
    assert [e.now_t for e in a.examples] == [e.now_t for e in b.examples]
    c = downsample(imbalanced(5, 500), ratio=10, seed=8)
    assert [e.now_t for e in a.examples] != [e.now_t for e in c.examples]


def test_downsample_never_drops_positives_or_duplicates_negatives():
    before = imbalanced(8, 400)
    after = downsample(before, ratio=20, seed=3)
    pos_keys = {e.now_t for e in before.examples if e.label == 1}
    assert {e.now_t for e in after.examples if e.label == 1} == pos_keys
    neg_keys = [e.now_t for e in after.examples if e.label == 0]
    assert len(neg_keys) == len(set(neg_keys))


def test_downsample_requires_positives():
    with pytest.raises(BalanceError, match="no minority"):
        downsample(toy_dataset(np.zeros((4, 2)), [0, 0, 0, 0]), ratio=30, seed=1)


def test_smote_interpolates_on_the_segment():
    x = np.vstack([[0.0, 0.0], [1.0, 1.0], np.full((10, 2), 5.0)])
    ds = toy_dataset(x, [1, 1] + [0] * 10)
    out = smote(ds, k=1, target_ratio=2, seed=2)
    synth = [e for e in out.examples if e.trace_id == SYNTHETIC_TRACE_ID]
    assert synth
    for e in synth:
        assert e.label == 1
        assert e.now_t == -1
        u = e.features[0]
        assert 0.0 <= u <= 1.0
        assert abs(e.features[1] - u) < 1e-12


def test_smote_stays_inside_the_bounding_box():
    gen = np.random.default_rng(4)
    x = np.vstack([gen.normal(0, 1, (6, 3)), gen.normal(0, 1, (60, 3))])
    y = np.array([1] * 6 + [0] * 60)
    out = smote(toy_dataset(x, y), k=3, target_ratio=5, seed=4)
    lo, hi = x[:6].min(axis=0), x[:6].max(axis=0)
    for e in out.examples:
        if e.trace_id == SYNTHETIC_TRACE_ID:
            assert np.all(e.features >= lo - 1e-12)
            assert np.all(e.features <= hi + 1e-12)


def test_smote_reaches_target_minority_count():
    ds = imbalanced(4, 120)
    out = smote(ds, k=2, target_ratio=10, seed=5)
    assert out.positive_count() >= math.ceil(120 / 10)
    assert out.negative_count() == 120


def test_smote_noop_when_target_met():
    ds = imbalanced(20, 40)
    out = smote(ds, k=3, target_ratio=10, seed=5)
    assert out.positive_count() == 20


def test_smote_is_deterministic():
    a = smote(imbalanced(4, 120), k=2, target_ratio=10, seed=9)
    b = smote(imbalanced(4, 120), k=2, target_ratio=10, seed=9)
    assert np.array_equal(a.feature_matrix(), b.feature_matrix())


def test_smote_input_validation():
    with pytest.raises(BalanceError):
        smote(imbalanced(1, 50), k=1, target_ratio=5, seed=1)
    with pytest.raises(BalanceError):
        smote(imbalanced(3, 50), k=5, target_ratio=5, seed=1)


def test_class_weight_rule():
    assert class_weights(imbalanced(1, 500)) == (1.0, 500.0)
    assert class_weights(imbalanced(50, 50)) == (1.0, 1.0)
    assert class_weights(imbalanced(10, 300)) == (1.0, 30.0)


def test_class_weights_require_both_classes():
    with pytest.raises(BalanceError):
        class_weights(toy_dataset(np.zeros((3, 2)), [1, 1, 1]))


def test_apply_balance_dispatch():
    ds = imbalanced(10, 900)
    out, weights = apply_balance(ds, BalanceConfig(method="downsample",
                                                   downsample_ratio=30, seed=1))
    assert out.negative_count() == 300 and weights == (1.0, 1.0)
    out, weights = apply_balance(ds, BalanceConfig(method="class_weights", seed=1))
    assert len(out) == len(ds) and weights == (1.0, 90.0)
    out, weights = apply_balance(ds, BalanceConfig(method="none", seed=1))
    assert len(out) == len(ds) and weights == (1.0, 1.0)
