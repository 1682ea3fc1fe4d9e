"""Exact path-dependent Shapley values for regression trees and forests.

``explain_forest`` runs the polynomial-time TreeSHAP path algorithm, which tracks
for every root-to-leaf path the proportion of feature subsets that flow down
it (the "unique path" with its permutation weights). ``brute_force_shapley``
enumerates all subsets of features and exists to check it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import combinations

import numba
import numpy as np

from .errors import DataError
from .forest import LEAF, Forest, RegressionTree, predict

MAX_BRUTE_FORCE_FEATURES = 15
DEGENERATE_MASS = 1e-15


@dataclass(frozen=True)
class Attribution:
    base_value: float
    phis: np.ndarray
    prediction: float = float("nan")
    normalized: np.ndarray | None = None
    degenerate: bool = False
    currency: str = ""
    target_date: object = None
    meta: dict = field(default_factory=dict, compare=False)


# ---------------------------------------------------------------- oracle side

def conditional_expectation(tree: RegressionTree, x, present) -> float:
    """E[f(x) | features in ``present`` fixed], using node covers for the rest."""
    present = set(present)

    def walk(node):
        f = tree.feature[node]
        if f == LEAF:
            return tree.value[node]
        l, r = tree.left[node], tree.right[node]
        if f in present:
            return walk(l if x[f] < tree.threshold[node] else r)
        return (tree.cover[l] * walk(l) + tree.cover[r] * walk(r)) / tree.cover[node]

    return float(walk(0))


def brute_force_shapley(tree: RegressionTree, x, n_features: int | None = None) -> tuple[np.ndarray, float]:
    """Shapley values by summing weighted marginal contributions over all subsets.

    Returns ``(phis, base_value)`` with ``base_value = f_x(empty set)``.
    """
    x = np.asarray(x, dtype=np.float64)
    m = len(x) if n_features is None else n_features
    if m > MAX_BRUTE_FORCE_FEATURES:
        raise ValueError(f"refusing to enumerate 2^{m} subsets (limit {MAX_BRUTE_FORCE_FEATURES} features)")
    value = {}
    for size in range(m + 1):
        for subset in combinations(range(m), size):
            value[subset] = conditional_expectation(tree, x, subset)
    weight = [math.factorial(s) * math.factorial(m - s - 1) / math.factorial(m) for s in range(m)]
    phis = np.zeros(m)
    for j in range(m):
        others = [k for k in range(m) if k != j]
        for size in range(m):
            for subset in combinations(others, size):
                with_j = tuple(sorted(subset + (j,)))
                phis[j] += weight[size] * (value[with_j] - value[subset])
    return phis, value[()]


# ------------------------------------------------------------- TreeSHAP core

@numba.njit(cache=True)
def _extend(feat, zero, one, pw, start, depth, zero_fraction, one_fraction, feature):
    feat[start + depth] = feature
    zero[start + depth] = zero_fraction
    one[start + depth] = one_fraction
    pw[start + depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[start + i + 1] += one_fraction * pw[start + i] * (i + 1) / (depth + 1)
        pw[start + i] = zero_fraction * pw[start + i] * (depth - i) / (depth + 1)


@numba.njit(cache=True)
def _unwind(feat, zero, one, pw, start, depth, path_index):
    one_fraction = one[start + path_index]
    zero_fraction = zero[start + path_index]
    next_one = pw[start + depth]
    for i in range(depth - 1, -1, -1):
        if one_fraction != 0.0:
            tmp = pw[start + i]
            pw[start + i] = next_one * (depth + 1) / ((i + 1) * one_fraction)
            next_one = tmp - pw[start + i] * zero_fraction * (depth - i) / (depth + 1)
        else:
            pw[start + i] = pw[start + i] * (depth + 1) / (zero_fraction * (depth - i))
    for i in range(path_index, depth):
        feat[start + i] = feat[start + i + 1]
        zero[start + i] = zero[start + i + 1]
        one[start + i] = one[start + i + 1]


@numba.njit(cache=True)
def _unwound_sum(zero, one, pw, start, depth, path_index):
    one_fraction = one[start + path_index]
    zero_fraction = zero[start + path_index]
    next_one = pw[start + depth]
    total = 0.0
    for i in range(depth - 1, -1, -1):
        if one_fraction != 0.0:
            tmp = next_one * (depth + 1) / ((i + 1) * one_fraction)
            total += tmp
            next_one = pw[start + i] - tmp * zero_fraction * (depth - i) / (depth + 1)
        else:
            total += pw[start + i] / (zero_fraction * (depth - i) / (depth + 1))
    return total


@numba.njit(cache=True)
def _tree_shap_row(feature, threshold, left, right, value, cover, x, phi,
                   feat, zero, one, pw, stack_i, stack_f):
    """Depth-first TreeSHAP walk for one row, using an explicit stack.

    Each pending visit carries (node, parent_start, depth, split_feature) and
    (zero_fraction, one_fraction). Children are pushed cold first so the hot
    subtree is finished before its sibling starts, as in the recursive form.
    Every level works on a private copy of its parent's path at
    ``parent_start + depth + 1``, which later siblings read unchanged.
    """
    # the root starts at index 0 with an empty parent path
    stack_i[0, 0] = 0
    stack_i[0, 1] = -1
    stack_i[0, 2] = 0
    stack_i[0, 3] = -1
    stack_f[0, 0] = 1.0
    stack_f[0, 1] = 1.0
    top = 1
    while top > 0:
        top -= 1
        node = stack_i[top, 0]
        parent_start = stack_i[top, 1]
        depth = stack_i[top, 2]
        split_feature = stack_i[top, 3]
        zero_fraction = stack_f[top, 0]
        one_fraction = stack_f[top, 1]

        start = parent_start + depth + 1
        if parent_start >= 0:
            for i in range(depth + 1):
                feat[start + i] = feat[parent_start + i]
                zero[start + i] = zero[parent_start + i]
                one[start + i] = one[parent_start + i]
                pw[start + i] = pw[parent_start + i]
        _extend(feat, zero, one, pw, start, depth, zero_fraction, one_fraction, split_feature)

        f = feature[node]
        if f < 0:
            for i in range(1, depth + 1):
                w = _unwound_sum(zero, one, pw, start, depth, i)
                phi[feat[start + i]] += w * (one[start + i] - zero[start + i]) * value[node]
            continue

        if x[f] < threshold[node]:
            hot, cold = left[node], right[node]
        else:
            hot, cold = right[node], left[node]
        incoming_zero = 1.0
        incoming_one = 1.0
        path_index = 0
        while path_index <= depth:
            if feat[start + path_index] == f:
                break
            path_index += 1
        if path_index != depth + 1:
            incoming_zero = zero[start + path_index]
            incoming_one = one[start + path_index]
            _unwind(feat, zero, one, pw, start, depth, path_index)
            depth -= 1

        stack_i[top, 0] = cold
        stack_i[top, 1] = start
        stack_i[top, 2] = depth + 1
        stack_i[top, 3] = f
        stack_f[top, 0] = cover[cold] / cover[node] * incoming_zero
        stack_f[top, 1] = 0.0
        stack_i[top + 1, 0] = hot
        stack_i[top + 1, 1] = start
        stack_i[top + 1, 2] = depth + 1
        stack_i[top + 1, 3] = f
        stack_f[top + 1, 0] = cover[hot] / cover[node] * incoming_zero
        stack_f[top + 1, 1] = incoming_one
        top += 2


@numba.njit(cache=True)
def _expected_value(feature, left, right, value, cover):
    """Prediction with no feature known: leaf values weighted by cover ratios."""
    total = 0.0
    nodes = np.empty(len(feature), dtype=np.int64)
    weights = np.empty(len(feature))
    nodes[0] = 0
    weights[0] = 1.0
    top = 1
    while top > 0:
        top -= 1
        node = nodes[top]
        w = weights[top]
        if feature[node] < 0:
            total += w * value[node]
        else:
            l, r = left[node], right[node]
            nodes[top] = l
            weights[top] = w * cover[l] / cover[node]
            nodes[top + 1] = r
            weights[top + 1] = w * cover[r] / cover[node]
            top += 2
    return total


@numba.njit(cache=True)
def _explain_batch(offsets, max_depths, feature, threshold, left, right, value, cover, X, out):
    n_trees = len(offsets) - 1
    n_rows, n_features = X.shape
    for t in range(n_trees):
        a, b = offsets[t], offsets[t + 1]
        f_t, thr_t, l_t, r_t = feature[a:b], threshold[a:b], left[a:b], right[a:b]
        v_t, c_t = value[a:b], cover[a:b]
        base = _expected_value(f_t, l_t, r_t, v_t, c_t)
        size = (max_depths[t] + 2) * (max_depths[t] + 3) // 2 + 1
        feat = np.empty(size, dtype=np.int64)
        zero = np.empty(size)
        one = np.empty(size)
        pw = np.empty(size)
        stack_i = np.empty((2 * max_depths[t] + 4, 4), dtype=np.int64)
        stack_f = np.empty((2 * max_depths[t] + 4, 2))
        phi = np.empty(n_features)
        for r in range(n_rows):
            phi[:] = 0.0
            _tree_shap_row(f_t, thr_t, l_t, r_t, v_t, c_t, X[r], phi,
                           feat, zero, one, pw, stack_i, stack_f)
            for j in range(n_features):
                out[r, j] += phi[j]
            out[r, n_features] += base


def _pack(trees):
    offsets = np.zeros(len(trees) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([t.n_nodes for t in trees])
    cat = lambda name: np.concatenate([getattr(t, name) for t in trees])  # noqa: E731
    depths = np.array([t.depth() for t in trees], dtype=np.int64)
    return (offsets, depths, cat("feature").astype(np.int64), cat("threshold"),
            cat("left").astype(np.int64), cat("right").astype(np.int64), cat("value"), cat("cover"))


def tree_shap(tree: RegressionTree, x, n_features: int | None = None) -> tuple[np.ndarray, float]:
    """TreeSHAP for one tree: ``(phis, base_value)``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    m = x.shape[1] if n_features is None else n_features
    out = np.zeros((1, m + 1))
    _explain_batch(*_pack([tree]), x, out)
    return out[0, :m], float(out[0, m])


def shap_values(forest: Forest, X) -> np.ndarray:
    """Rows of ``[phi_1 .. phi_M, phi_0]`` for every row of ``X``.

    Per-tree values are averaged, matching the forest's mean prediction.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != forest.n_features:
        raise DataError(f"expected {forest.n_features} features, got {X.shape[1]}")
    out = np.zeros((len(X), forest.n_features + 1))
    _explain_batch(*_pack(forest.trees), np.ascontiguousarray(X), out)
    return out / len(forest.trees)


def explain_forest(forest: Forest, x) -> Attribution:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DataError("explain_forest takes one instance; use shap_values for batches")
    row = shap_values(forest, x)[0]
    return Attribution(float(row[-1]), row[:-1].copy(), predict(forest, x))


def normalize_attribution(raw: Attribution) -> Attribution:
    """Scale phis by their L1 mass so every entry lies in [-1, 1]."""
    mass = float(np.sum(np.abs(raw.phis)))
    if mass > DEGENERATE_MASS:
        return replace(raw, normalized=raw.phis / mass, degenerate=False)
    return replace(raw, normalized=np.zeros_like(raw.phis), degenerate=True)


def explain_batch(forest: Forest, X) -> list[Attribution]:
    """Normalized attributions for every row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    rows = shap_values(forest, X)
    preds = predict(forest, X)
    return [normalize_attribution(Attribution(float(r[-1]), r[:-1].copy(), float(p)))
            for r, p in zip(rows, preds)]
