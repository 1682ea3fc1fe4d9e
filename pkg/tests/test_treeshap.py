import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fx_attrib.forest import LEAF, Forest, ForestConfig, RegressionTree, fit_forest, predict
from fx_attrib.treeshap import (
    Attribution, brute_force_shapley, conditional_expectation, explain_batch, explain_forest,
    normalize_attribution, shap_values, tree_shap,
)
from fx_attrib.verify import random_tree, verify_shap


def stump(feature, thr, a, b, wa=1.0, wb=1.0):
    return RegressionTree.from_nodes([
        (feature, thr, 1, 2, 0.0, wa + wb),
        (LEAF, 0.0, LEAF, LEAF, a, wa),
        (LEAF, 0.0, LEAF, LEAF, b, wb),
    ])


def and_tree():
    # f = 1 iff x0 >= .5 and x1 >= .5, built symmetrically in features 0 and 1
    return RegressionTree.from_nodes([
        (0, 0.5, 1, 2, 0.0, 4.0),
        (LEAF, 0, LEAF, LEAF, 0.0, 2.0),
        (1, 0.5, 3, 4, 0.0, 2.0),
        (LEAF, 0, LEAF, LEAF, 0.0, 1.0),
        (LEAF, 0, LEAF, LEAF, 1.0, 1.0),
    ])


def test_conditional_expectation_examples():
    t = stump(0, 0.5, 2.0, 6.0, 1.0, 3.0)
    assert conditional_expectation(t, np.array([0.2]), [0]) == 2.0
    assert conditional_expectation(t, np.array([0.2]), []) == (1 * 2.0 + 3 * 6.0) / 4
    single = RegressionTree.from_nodes([(LEAF, 0.0, LEAF, LEAF, 1.7, 5.0)])
    assert conditional_expectation(single, np.zeros(3), [0, 2]) == 1.7


def test_constant_tree():
    single = RegressionTree.from_nodes([(LEAF, 0.0, LEAF, LEAF, 1.7, 5.0)])
    phi, base = brute_force_shapley(single, np.zeros(3))
    assert base == 1.7 and np.all(phi == 0)
    phi, base = tree_shap(single, np.zeros(3))
    assert base == 1.7 and np.all(phi == 0)


@pytest.mark.parametrize("explainer", [brute_force_shapley, tree_shap])
def test_depth_one_hand_values(explainer):
    a, b = 3.0, -1.0
    phi, base = explainer(stump(1, 0.5, a, b), np.array([0.9, 0.1, 0.4]))
    assert base == pytest.approx((a + b) / 2, abs=1e-15)
    assert phi[1] == pytest.approx((a - b) / 2, abs=1e-15)
    assert phi[0] == 0.0 and phi[2] == 0.0


def test_brute_force_refuses_large_m():
    with pytest.raises(ValueError):
        brute_force_shapley(stump(0, 0.5, 0, 1), np.zeros(16))


def test_treeshap_matches_brute_force():
    res = verify_shap(trials=200, seed=1)
    assert res.failures == 0, res


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_dummy_feature_is_exactly_zero(seed):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, 5, 4)
    x = rng.uniform(size=7)  # features 5 and 6 never split
    phi, _ = tree_shap(t, x)
    unused = [j for j in range(7) if j not in t.used_features()]
    assert all(phi[j] == 0.0 for j in unused)
    phi_bf, _ = brute_force_shapley(t, x)
    assert all(phi_bf[j] == 0.0 for j in unused)


@pytest.mark.parametrize("x", [[0.9, 0.9, 0.3], [0.1, 0.1, 0.3], [0.7, 0.8, 0.0]])
def test_symmetric_features_share_credit(x):
    phi, _ = tree_shap(and_tree(), np.array(x))
    assert phi[0] == phi[1]
    assert phi[2] == 0.0


def test_local_accuracy_on_forest(rng):
    X = rng.normal(size=(300, 13))
    y = X[:, 0] - 2 * (X[:, 3] > 0) + 0.1 * rng.normal(size=300)
    f = fit_forest(X, y, ForestConfig(tree_count=30, seed=2))
    rows = shap_values(f, X)
    assert np.max(np.abs(rows.sum(axis=1) - predict(f, X))) < 1e-9


def test_identically_routed_inputs_match(rng):
    X = rng.normal(size=(100, 4))
    f = fit_forest(X, X[:, 0], ForestConfig(tree_count=5, max_features=4, seed=0))
    x = X[0].copy()
    nudged = x + 1e-12
    assert all(np.array_equal(t.apply(x), t.apply(nudged)) for t in f.trees)
    a, b = explain_forest(f, x), explain_forest(f, nudged)
    assert np.array_equal(a.phis, b.phis) and a.base_value == b.base_value


def test_normalization_example():
    raw = Attribution(0.0, np.array([0.2, -0.1, 0.1] + [0.0] * 10))
    n = normalize_attribution(raw)
    assert n.normalized[:3].tolist() == pytest.approx([0.5, -0.25, 0.25], abs=1e-15)
    assert np.all(n.normalized[3:] == 0) and not n.degenerate


def test_normalization_degenerate():
    n = normalize_attribution(Attribution(0.4, np.zeros(13)))
    assert n.degenerate and np.all(n.normalized == 0)


@given(st.lists(st.floats(-1e6, 1e6), min_size=13, max_size=13))
def test_normalized_values_bounded(phis):
    n = normalize_attribution(Attribution(0.0, np.array(phis)))
    assert np.max(np.abs(n.normalized)) <= 1.0
    if not n.degenerate:
        assert np.sum(np.abs(n.normalized)) == pytest.approx(1.0, abs=1e-12)


def test_explain_batch_fields(rng):
    X = rng.normal(size=(20, 13))
    f = fit_forest(X, X[:, 2], ForestConfig(tree_count=5, seed=1))
    attrs = explain_batch(f, X)
    assert len(attrs) == 20
    for a, p in zip(attrs, predict(f, X)):
        assert a.prediction == p
        assert a.base_value + a.phis.sum() == pytest.approx(p, abs=1e-9)


def test_forest_attributions_are_tree_means():
    t1, t2 = stump(0, 0.5, 1.0, 3.0), stump(1, 0.5, -2.0, 2.0)
    x = np.array([0.2, 0.8])
    rows = shap_values(Forest([t1, t2], 2), x)[0]
    p1, b1 = tree_shap(t1, x)
    p2, b2 = tree_shap(t2, x)
    assert np.allclose(rows[:2], (p1 + p2) / 2, atol=1e-15)
    assert rows[2] == pytest.approx((b1 + b2) / 2, abs=1e-15)
