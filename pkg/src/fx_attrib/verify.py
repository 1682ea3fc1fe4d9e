"""Randomised self-checks: TreeSHAP against subset enumeration, BPTT against finite differences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lstm
from .forest import LEAF, RegressionTree
from .treeshap import brute_force_shapley, tree_shap


def random_tree(rng: np.random.Generator, n_features: int = 6, max_depth: int = 4,
                split_prob: float = 0.8) -> RegressionTree:
    """Random tree with thresholds in (0, 1) and leaf covers drawn from 1..50.

    Internal covers are the sums of their children, so covers stay consistent.
    """
    nodes = []

    def grow(depth):
        node = len(nodes)
        nodes.append(None)
        if depth < max_depth and (depth == 0 or rng.random() < split_prob):
            f = int(rng.integers(0, n_features))
            thr = float(rng.uniform(0.05, 0.95))
            left = grow(depth + 1)
            right = grow(depth + 1)
            nodes[node] = (f, thr, left, right, 0.0, nodes[left][5] + nodes[right][5])
        else:
            nodes[node] = (LEAF, 0.0, LEAF, LEAF, float(rng.normal()), float(rng.integers(1, 51)))
        return node

    grow(0)
    return RegressionTree.from_nodes(nodes)


@dataclass
class ShapCheck:
    trials: int
    max_error: float
    failures: int


def verify_shap(trials: int = 200, seed: int = 0, tol: float = 1e-9) -> ShapCheck:
    rng = np.random.default_rng(seed)
    worst, failures = 0.0, 0
    for _ in range(trials):
        m = int(rng.integers(1, 7))
        tree = random_tree(rng, m, int(rng.integers(1, 5)))
        x = rng.uniform(size=m)
        phi, base = tree_shap(tree, x)
        phi_bf, base_bf = brute_force_shapley(tree, x)
        err = max(float(np.max(np.abs(phi - phi_bf))), abs(base - base_bf))
        worst = max(worst, err)
        failures += err >= tol
    return ShapCheck(trials, worst, failures)


def verify_grad(seeds: int = 20, hidden_size: int = 3, window: int = 5, step: float = 1e-5) -> list[float]:
    """Gradient-check error for seeds 1..``seeds`` on random windows and targets."""
    errors = []
    for seed in range(1, seeds + 1):
        cfg = lstm.TrainConfig(hidden_size=hidden_size, seed=seed, window=window)
        params = lstm.init_parameters(cfg)
        rng = np.random.default_rng(seed)
        errors.append(lstm.gradient_check(params, rng.uniform(size=window), float(rng.uniform()), step))
    return errors
