"""Weighted CART trees, bagged forests and leaf-to-rule conversion.

Trees split on axis-aligned thresholds (left: x <= t, right: x > t) chosen to
minimize weighted Gini impurity. Sample weights are normalized to sum to one
before growing, so the tree is invariant to rescaling the weights. Samples of
zero weight are routed down the tree but never influence a split, a
threshold or a leaf histogram.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from rulegen.dataio import Dataset
from rulegen.rules import GT, LE, Condition, CostPolicy, Rule, canonicalize, rule_cost

MIN_GAIN = 1e-12
_TIE_RTOL = 1e-9


@dataclass(frozen=True)
class TreeNode:
    feature: int = -1
    threshold: float = float("nan")
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None
    label: int = -1
    histogram: tuple = ()

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())

    def n_leaves(self) -> int:
        if self.is_leaf:
            return 1
        return self.left.n_leaves() + self.right.n_leaves()

    def predict(self, X) -> np.ndarray:
        X = np.asarray(getattr(X, "features", X), dtype=float)
        out = np.empty(X.shape[0], dtype=np.int64)
        self._route(X, np.arange(X.shape[0]), out)
        return out

    def _route(self, X, idx, out):
        if self.is_leaf:
            out[idx] = self.label
            return
        go_left = X[idx, self.feature] <= self.threshold
        self.left._route(X, idx[go_left], out)
        self.right._route(X, idx[~go_left], out)


@dataclass
class Forest:
    trees: list
    seeds: list
    bootstrap: bool
    features_per_split: Optional[int]
    class_count: int
    samples_per_tree: list = field(default_factory=list)

    def predict(self, X) -> np.ndarray:
        """Majority vote over trees; ties go to the smallest class index."""
        X = np.asarray(getattr(X, "features", X), dtype=float)
        votes = np.zeros((X.shape[0], self.class_count), dtype=np.int64)
        rows = np.arange(X.shape[0])
        for tree in self.trees:
            np.add.at(votes, (rows, tree.predict(X)), 1)
        return np.argmax(votes, axis=1)


def _argmax_ties_low(values: np.ndarray) -> int:
    best = values.max()
    return int(np.flatnonzero(values >= best - _TIE_RTOL * abs(best))[0])


def _gini_mass(hist: np.ndarray, total) -> np.ndarray:
    """Weighted impurity W*(1 - sum p_k^2) = W - sum h_k^2 / W (rows of ``hist``)."""
    with np.errstate(invalid="ignore", divide="ignore"):
        out = total - np.square(hist).sum(axis=-1) / total
    return np.where(total > 0, out, 0.0)


def _best_split(X, y_onehot, w, features):
    """Best (gain, feature, threshold) over ``features`` for positive-weight rows."""
    hist = (y_onehot * w[:, None]).sum(axis=0)
    W = w.sum()
    parent = _gini_mass(hist, W)
    best = (0.0, -1, np.nan)
    for f in features:
        col = X[:, f]
        order = np.argsort(col, kind="stable")
        xs = col[order]
        boundary = np.flatnonzero(xs[:-1] < xs[1:])
        if boundary.size == 0:
            continue
        cum = np.cumsum(y_onehot[order] * w[order, None], axis=0)
        left = cum[boundary]
        wl = left.sum(axis=1)
        right = hist[None, :] - left
        wr = W - wl
        gains = parent - _gini_mass(left, wl) - _gini_mass(right, wr)
        k = _argmax_ties_low(gains)
        g = gains[k]
        if g > best[0] * (1 + _TIE_RTOL) + MIN_GAIN * 1e-3 and g > MIN_GAIN:
            best = (float(g), int(f), float((xs[boundary[k]] + xs[boundary[k] + 1]) / 2.0))
    return best


def fit_tree(
    data: Dataset,
    weights=None,
    max_depth: int = 3,
    features_per_split: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> TreeNode:
    """Grow a weighted CART tree of depth at most ``max_depth``."""
    X = data.features
    y = data.labels
    K = data.class_count
    n = X.shape[0]
    if max_depth < 1:
        raise ValueError("max_depth must be at least 1")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float).copy()
    if w.shape != (n,):
        raise ValueError(f"{w.shape[0]} weights given for {n} samples")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("sample weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise ValueError("at least one sample weight must be positive")
    w /= total
    onehot = np.eye(K)[y]
    p = X.shape[1]
    if features_per_split is not None and not 1 <= features_per_split <= p:
        raise ValueError(f"features_per_split must lie in [1, {p}]")
    if features_per_split is not None and features_per_split < p and rng is None:
        rng = np.random.default_rng(0)

    def grow(idx, depth):
        live = idx[w[idx] > 0]
        hist = (onehot[live] * w[live, None]).sum(axis=0)
        leaf = TreeNode(label=_argmax_ties_low(hist), histogram=tuple(float(h) * total for h in hist))
        if depth >= max_depth or np.count_nonzero(hist > 0) <= 1:
            return leaf
        if features_per_split is None or features_per_split >= p:
            features = range(p)
        else:
            features = np.sort(rng.choice(p, size=features_per_split, replace=False))
        gain, f, t = _best_split(X[live], onehot[live], w[live], features)
        if f < 0:
            return leaf
        go_left = X[idx, f] <= t
        return TreeNode(
            feature=f,
            threshold=t,
            left=grow(idx[go_left], depth + 1),
            right=grow(idx[~go_left], depth + 1),
            label=leaf.label,
            histogram=leaf.histogram,
        )

    return grow(np.arange(n), 0)


def leaves_to_rules(tree: TreeNode, cost_policy=CostPolicy.UNIT) -> list[Rule]:
    """One canonical rule per leaf, left-to-right."""
    policy = CostPolicy.parse(cost_policy)
    out: list[Rule] = []

    def walk(node, path):
        if node.is_leaf:
            rule = canonicalize(Rule(conditions=tuple(path), label=node.label))
            out.append(rule.with_cost(rule_cost(rule, policy)))
            return
        walk(node.left, path + [Condition(node.feature, LE, node.threshold)])
        walk(node.right, path + [Condition(node.feature, GT, node.threshold)])

    walk(tree, [])
    return out


def resolve_features_per_split(spec, p: int) -> Optional[int]:
    """Accept an int, ``"sqrt"``, ``"all"`` or None."""
    if spec is None or spec == "all":
        return None
    if spec == "sqrt":
        return max(1, int(np.sqrt(p)))
    if spec == "log2":
        return max(1, int(np.log2(p)))
    k = int(spec)
    return None if k >= p else k


def fit_forest(
    data: Dataset,
    n_trees: int = 100,
    max_depth: int = 3,
    features_per_split="sqrt",
    seed: int = 0,
    bootstrap: bool = True,
) -> Forest:
    """Bagged, feature-subsampled CART trees; deterministic given ``seed``."""
    if n_trees < 1:
        raise ValueError("n_trees must be at least 1")
    k = resolve_features_per_split(features_per_split, data.n_features)
    master = np.random.default_rng(seed)
    seeds = [int(s) for s in master.integers(0, 2**63 - 1, size=n_trees)]
    n = data.n_samples
    trees = []
    counts = []
    for s in seeds:
        rng = np.random.default_rng(s)
        if bootstrap:
            weights = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(float)
        else:
            weights = np.ones(n)
        trees.append(fit_tree(data, weights, max_depth=max_depth, features_per_split=k, rng=rng))
        counts.append(int(np.count_nonzero(weights)))
    return Forest(
        trees=trees,
        seeds=seeds,
        bootstrap=bootstrap,
        features_per_split=k,
        class_count=data.class_count,
        samples_per_tree=counts,
    )
