"""CART regression trees and a bagged random forest.

Trees are stored as flat node arrays (sklearn-style) so TreeSHAP can walk them
without Python objects. A leaf has ``feature == -1``. Samples go left when
``x[feature] < threshold``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError

LEAF = -1


@dataclass(frozen=True)
class ForestConfig:
    tree_count: int = 200
    max_depth: int = 8
    min_leaf: int = 5
    max_features: int = 4
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.tree_count < 1 or self.max_depth < 0 or self.min_leaf < 1 or self.max_features < 1:
            raise ValueError(f"invalid forest config {self}")


@dataclass
class RegressionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    def __len__(self):
        return len(self.feature)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] == LEAF

    def depth(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            if not self.is_leaf(node):
                stack += [(self.left[node], d + 1), (self.right[node], d + 1)]
        return best

    def used_features(self) -> set[int]:
        return {int(f) for f in self.feature if f != LEAF}

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by each row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] != LEAF
        while np.any(active):
            idx = np.nonzero(active)[0]
            n = node[idx]
            go_left = X[idx, self.feature[n]] < self.threshold[n]
            node[idx] = np.where(go_left, self.left[n], self.right[n])
            active[idx] = self.feature[node[idx]] != LEAF
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    @classmethod
    def from_nodes(cls, nodes: Sequence[tuple]) -> "RegressionTree":
        """Build from ``(feature, threshold, left, right, value, cover)`` rows."""
        cols = list(zip(*nodes))
        return cls(
            np.array(cols[0], dtype=np.int64), np.array(cols[1], dtype=np.float64),
            np.array(cols[2], dtype=np.int64), np.array(cols[3], dtype=np.int64),
            np.array(cols[4], dtype=np.float64), np.array(cols[5], dtype=np.float64),
        )

    def check(self) -> None:
        """Raise if covers are inconsistent or some node is unreachable."""
        seen = set()
        stack = [0]
        while stack:
            node = stack.pop()
            if node in seen:
                raise DataError(f"node {node} reached twice")
            seen.add(node)
            if not self.is_leaf(node):
                l, r = self.left[node], self.right[node]
                if not np.isfinite(self.threshold[node]):
                    raise DataError(f"node {node}: non-finite threshold")
                if not np.isclose(self.cover[l] + self.cover[r], self.cover[node], rtol=1e-12, atol=0):
                    raise DataError(f"node {node}: child covers do not sum to parent")
                stack += [l, r]
        if len(seen) != self.n_nodes:
            raise DataError("tree has unreachable nodes")


@dataclass
class Forest:
    trees: list[RegressionTree]
    n_features: int
    config: ForestConfig | None = None

    def __len__(self):
        return len(self.trees)


def _best_split(X, y, features, min_leaf):
    """Best ``(gain, feature, threshold)`` over ``features``, or None.

    Gain is the drop in summed squared error. Features are scanned in
    increasing index order and a candidate must beat the incumbent strictly,
    so ties go to the lowest feature and then the lowest threshold.
    """
    n = len(y)
    yc = y - y.mean()
    total_sse = float(yc @ yc)
    best = (0.0, -1, 0.0)
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = yc[order]
        csum = np.cumsum(ys)[:-1]
        n_left = np.arange(1, n)
        valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not np.any(valid):
            continue
        # sum of parent is 0 after centring, so right sum is -left sum
        gain = csum ** 2 / n_left + csum ** 2 / (n - n_left)
        gain = np.where(valid, gain, -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > best[0]:
            lo, hi = xs[k], xs[k + 1]
            thr = lo + (hi - lo) / 2.0
            if not lo < thr <= hi:
                thr = hi
            best = (float(gain[k]), int(f), float(thr))
    if best[1] < 0 or best[0] <= 1e-14 * max(total_sse, 1e-300):
        return None
    return best


def fit_tree(
    X,
    y,
    config: ForestConfig = ForestConfig(),
    rng: np.random.Generator | None = None,
) -> RegressionTree:
    """Greedy CART with variance-reduction splits.

    At each node ``config.max_features`` features are drawn without
    replacement from ``rng``; growth stops at ``max_depth``, when either child
    would hold fewer than ``min_leaf`` samples, or when the node is pure.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise DataError("cannot fit a tree on zero samples")
    n_features = X.shape[1]
    k = min(config.max_features, n_features)
    if rng is None:
        rng = np.random.default_rng(config.seed)

    nodes: list[list] = []
    # preorder construction keeps node numbering deterministic
    stack = [(np.arange(len(y)), 0, -1, False)]
    while stack:
        idx, depth, parent, is_right = stack.pop()
        node_id = len(nodes)
        if parent >= 0:
            nodes[parent][3 if is_right else 2] = node_id
        ys = y[idx]
        value = float(ys.mean())
        nodes.append([LEAF, 0.0, LEAF, LEAF, value, float(len(idx))])
        if depth >= config.max_depth or len(idx) < 2 * config.min_leaf or np.all(ys == ys[0]):
            continue
        feats = np.arange(n_features) if k == n_features else np.sort(rng.choice(n_features, k, replace=False))
        split = _best_split(X[idx], ys, feats, config.min_leaf)
        if split is None:
            continue
        _, f, thr = split
        go_left = X[idx, f] < thr
        nodes[node_id][0] = f
        nodes[node_id][1] = thr
        stack.append((idx[~go_left], depth + 1, node_id, True))
        stack.append((idx[go_left], depth + 1, node_id, False))
    return RegressionTree.from_nodes(nodes)


def worker_count() -> int:
    """Worker cap from ``FX_ATTRIB_THREADS`` (0 or unset means automatic)."""
    try:
        n = int(os.environ.get("FX_ATTRIB_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def parallel_map(fn, items):
    """Ordered map over ``items``; results do not depend on the worker count."""
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, tree_index])


def fit_forest(X, y, config: ForestConfig = ForestConfig()) -> Forest:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise DataError("cannot fit a forest on zero samples")
    if len(X) != len(y):
        raise DataError(f"{len(X)} feature rows but {len(y)} targets")
    n = len(y)

    def one(t):
        rng = tree_rng(config.seed, t)
        if config.bootstrap:
            rows = rng.integers(0, n, size=n)
            return fit_tree(X[rows], y[rows], config, rng)
        return fit_tree(X, y, config, rng)

    return Forest(parallel_map(one, range(config.tree_count)), X.shape[1], config)


def predict(forest: Forest, X) -> np.ndarray | float:
    """Mean leaf value over trees; a 1-D input gives a scalar."""
    arr = np.asarray(X, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != forest.n_features:
        raise DataError(f"expected {forest.n_features} features, got {arr.shape[1]}")
    out = np.zeros(len(arr))
    for tree in forest.trees:
        out += tree.predict(arr)
    out /= len(forest.trees)
    return float(out[0]) if single else out


def save(path: str | Path, forest: Forest) -> None:
    """Write the forest as text.

    Layout: a ``# fx_attrib forest v1`` line, ``n_features <m>``, optional
    ``config key=value ...``, then per tree ``tree <i> <node count>`` followed
    by one ``feature threshold left right value cover`` row per node. Leaves
    carry feature/left/right = -1.
    """
    lines = ["# fx_attrib forest v1", f"n_features {forest.n_features}"]
    if forest.config is not None:
        lines.append("config " + " ".join(f"{k}={int(v) if isinstance(v, bool) else v}"
                                          for k, v in asdict(forest.config).items()))
    for i, t in enumerate(forest.trees):
        lines.append(f"tree {i} {t.n_nodes}")
        for j in range(t.n_nodes):
            lines.append(f"{t.feature[j]} {float(t.threshold[j])!r} {t.left[j]} {t.right[j]} "
                         f"{float(t.value[j])!r} {float(t.cover[j])!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load(path: str | Path) -> Forest:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("# fx_attrib forest"):
        raise DataError(f"{path}: not a forest file")
    n_features, config, trees = None, None, []
    i = 1
    while i < len(lines):
        key, *rest = lines[i].split()
        i += 1
        if key == "n_features":
            n_features = int(rest[0])
        elif key == "config":
            kv = dict(item.split("=", 1) for item in rest)
            config = ForestConfig(
                int(kv["tree_count"]), int(kv["max_depth"]), int(kv["min_leaf"]),
                int(kv["max_features"]), bool(int(kv["bootstrap"])), int(kv["seed"]),
            )
        elif key == "tree":
            count = int(rest[1])
            rows = []
            for line in lines[i:i + count]:
                f, thr, l, r, v, c = line.split()
                rows.append((int(f), float(thr), int(l), int(r), float(v), float(c)))
            i += count
            tree = RegressionTree.from_nodes(rows)
            tree.check()
            trees.append(tree)
        else:
            raise DataError(f"{path}: unknown entry {key!r}")
    if n_features is None or not trees:
        raise DataError(f"{path}: incomplete forest file")
    return Forest(trees, n_features, config)
