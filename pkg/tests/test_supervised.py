import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmdbench.supervised import (LabeledWindowSet, RFConfig, RandomForestModel, best_split,
                                 build_balanced_set, build_tree, score_rf, train_rf)

from oracles import exhaustive_split


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 30), st.integers(1, 4), st.integers(2, 6))
def test_best_split_matches_exhaustive_search(seed, n, d, levels):
    rng = np.random.default_rng(seed)
    # few distinct values so ties and repeated thresholds are common
    x = rng.integers(0, levels, (n, d)).astype(float)
    y = rng.integers(0, 2, n)
    got = best_split(x, y, np.arange(d))
    ref = exhaustive_split(x, y, range(d))
    if ref is None:
        assert got is None
        return
    assert math.isclose(got[2], ref[2], abs_tol=1e-12)
    assert got[:2] == ref[:2]


def test_best_split_separable():
    x = np.array([[0.0], [1.0], [2.0], [3.0]])
    assert best_split(x, np.array([0, 0, 1, 1]), [0]) == (0, 1.5, 0.0)


def test_constant_features_give_no_split():
    assert best_split(np.ones((5, 2)), np.array([0, 1, 0, 1, 1]), [0, 1]) is None


def test_tree_fits_training_data():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 3))
    y = (x[:, 0] + x[:, 1] > 0).astype(int)
    tree = build_tree(x, y, 30, 3, rng)
    np.testing.assert_array_equal(tree.predict_proba(x) > 0.5, y.astype(bool))


def test_forest_separates_classes_and_roundtrips():
    rng = np.random.default_rng(1)
    x = np.concatenate([rng.normal(0, 1, (100, 4)), rng.normal(2, 1, (100, 4))])
    y = np.repeat([0, 1], 100)
    data = LabeledWindowSet(x, y, np.where(y, "Ddos", "benign"))
    model = train_rf(data, RFConfig(n_trees=20, max_depth=6), seed=3)
    p = score_rf(model, x)
    assert p[y == 1].mean() > 0.8 and p[y == 0].mean() < 0.2
    back = RandomForestModel.from_dict(model.to_dict())
    np.testing.assert_array_equal(score_rf(back, x), p)


def test_balanced_set_counts():
    tags = np.array(["benign"] * 50 + ["A"] * 30 + ["B"] * 30, dtype=object)
    y = (tags != "benign").astype(int)
    data = LabeledWindowSet(np.arange(110.0)[:, None], y, tags)
    out = build_balanced_set(data, ["A", "B"], 40, seed=0)
    assert (out.labels == 0).sum() == 20
    assert (out.behavior_tag == "A").sum() == 10 and (out.behavior_tag == "B").sum() == 10
    with pytest.raises(ValueError):
        build_balanced_set(data, ["A", "B"], 42)
    with pytest.raises(ValueError):
        build_balanced_set(data, ["A"], 200)


def test_single_class_training_rejected():
    data = LabeledWindowSet(np.zeros((4, 2)), np.zeros(4), np.full(4, "benign"))
    with pytest.raises(ValueError):
        train_rf(data)
