"""Variance-reduction regression trees.

Trees are grown greedily: at each node a feature subset is drawn, every
midpoint between consecutive distinct values of each drawn feature is scored
by the children's summed squared error, and the (feature, threshold) pair with
the smallest total wins. Ties break toward the lower feature index, then the
lower threshold, so fits are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ALL_FEATURES = "all"


@dataclass(frozen=True)
class TreeParams:
    """Growth limits. ``max_depth=None`` means unbounded.

    ``feature_subset_size`` of None lets the caller pick a context default
    (fit_tree uses all features; forests use max(1, d // 3)); the string
    "all" forces every feature explicitly.
    """

    max_depth: int | None = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    feature_subset_size: int | str | None = None

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1 (or None)")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        fss = self.feature_subset_size
        if fss is not None and fss != ALL_FEATURES and (not isinstance(fss, int) or fss < 1):
            raise ValueError("feature_subset_size must be a positive int, 'all', or None")


@dataclass
class RegressionTree:
    """Flat node-array tree: feature[i] < 0 marks a leaf with prediction value[i]."""

    n_features: int
    feature: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int32))
    threshold: np.ndarray = field(default_factory=lambda: np.empty(0))
    left: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int32))
    right: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int32))
    value: np.ndarray = field(default_factory=lambda: np.empty(0))
    count: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())


class _TreeBuilder:
    def __init__(self):
        self.feature, self.threshold = [], []
        self.left, self.right = [], []
        self.value, self.count = [], []

    def add(self) -> int:
        for arr, fill in (
            (self.feature, -1),
            (self.threshold, 0.0),
            (self.left, -1),
            (self.right, -1),
            (self.value, 0.0),
            (self.count, 0),
        ):
            arr.append(fill)
        return len(self.feature) - 1

    def finish(self, n_features: int) -> RegressionTree:
        return RegressionTree(
            n_features,
            np.asarray(self.feature, dtype=np.int32),
            np.asarray(self.threshold),
            np.asarray(self.left, dtype=np.int32),
            np.asarray(self.right, dtype=np.int32),
            np.asarray(self.value),
            np.asarray(self.count, dtype=np.int64),
        )


def _best_sse_split(X, y, indices, features, min_leaf):
    """Smallest children-SSE split over midpoint candidates, or None.

    All drawn features are scanned in one vectorized pass. The winning
    candidate is the first minimum in (feature-major, threshold-minor) order,
    which realizes the (lower feature, lower threshold) tie-break.
    """
    m = len(indices)
    if m < 2 * min_leaf:
        return None
    xs = X[np.ix_(indices, features)]  # (m, k)
    ys = y[indices]
    order = np.argsort(xs, axis=0, kind="stable")
    sx = np.take_along_axis(xs, order, axis=0)
    sy = ys[order]
    c1 = np.cumsum(sy, axis=0)
    c2 = np.cumsum(sy * sy, axis=0)
    s1, s2 = c1[-1], c2[-1]

    n_left = np.arange(1, m, dtype=float)[:, None]
    n_right = m - n_left
    valid = sx[:-1] < sx[1:]  # distinct neighbors -> midpoint candidate
    if min_leaf > 1:
        valid &= (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    sse_left = c2[:-1] - c1[:-1] ** 2 / n_left
    sse_right = (s2 - c2[:-1]) - (s1 - c1[:-1]) ** 2 / n_right
    total = np.where(valid, sse_left + sse_right, np.inf)

    flat = int(np.argmin(total.T.ravel()))  # feature-major scan order
    col, p = divmod(flat, m - 1)
    thr = 0.5 * (sx[p, col] + sx[p + 1, col])
    return (float(total[p, col]), int(features[col]), thr)


def fit_tree(X, y, p: TreeParams, rng: np.random.Generator) -> RegressionTree:
    """Grow a regression tree on complete numeric data.

    Stops a branch on max_depth, min_samples_split, min_samples_leaf, zero
    target variance, or when no admissible split exists; leaves predict the
    mean of their training targets. The rng is consumed only when a proper
    feature subset is drawn, so "all features" fits are rng-independent.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be (n, d) with matching y")
    if len(y) == 0:
        raise ValueError("cannot fit a tree on empty data")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("X and y must be finite (impute missing values upstream)")
    n, d = X.shape

    subset = p.feature_subset_size
    if subset is None or subset == ALL_FEATURES:
        subset = d
    subset = min(subset, d)

    builder = _TreeBuilder()
    root = builder.add()
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, indices, depth = stack.pop()
        ys = y[indices]
        builder.value[node] = float(ys.mean())
        builder.count[node] = len(indices)

        at_depth = p.max_depth is not None and depth >= p.max_depth
        if at_depth or len(indices) < p.min_samples_split or ys.min() == ys.max():
            continue
        if subset < d:
            features = np.sort(rng.choice(d, size=subset, replace=False))
        else:
            features = np.arange(d)
        best = _best_sse_split(X, y, indices, features, p.min_samples_leaf)
        if best is None:
            continue
        _, f, thr = best
        go_left = X[indices, f] <= thr
        builder.feature[node] = f
        builder.threshold[node] = thr
        left = builder.add()
        right = builder.add()
        builder.left[node] = left
        builder.right[node] = right
        # push right first so left subtrees are numbered before right ones
        stack.append((right, indices[~go_left], depth + 1))
        stack.append((left, indices[go_left], depth + 1))
    return builder.finish(d)


def predict_tree(t: RegressionTree, x) -> float:
    """Route one feature vector to its leaf (x[feature] <= threshold goes left)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (t.n_features,):
        raise ValueError(f"expected feature vector of length {t.n_features}, got shape {x.shape}")
    node = 0
    while t.feature[node] >= 0:
        node = t.left[node] if x[t.feature[node]] <= t.threshold[node] else t.right[node]
    return float(t.value[node])


def predict_tree_matrix(t: RegressionTree, X) -> np.ndarray:
    """Vectorized routing of an (n, d) matrix through the tree."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != t.n_features:
        raise ValueError(f"expected (n, {t.n_features}) matrix, got shape {X.shape}")
    node = np.zeros(len(X), dtype=np.int64)
    rows = np.arange(len(X))
    while True:
        f = t.feature[node]
        active = f >= 0
        if not active.any():
            break
        xi = X[rows[active], f[active]]
        go_left = xi <= t.threshold[node[active]]
        node[active] = np.where(go_left, t.left[node[active]], t.right[node[active]])
    return t.value[node]


TREE_FORMAT = "wellcast.regression-tree"
TREE_FORMAT_VERSION = 1


def tree_to_dict(t: RegressionTree) -> dict:
    """Versioned JSON-ready form (flat node arrays)."""
    return {
        "format": TREE_FORMAT,
        "version": TREE_FORMAT_VERSION,
        "n_features": t.n_features,
        "feature": t.feature.tolist(),
        "threshold": t.threshold.tolist(),
        "left": t.left.tolist(),
        "right": t.right.tolist(),
        "value": t.value.tolist(),
        "count": t.count.tolist(),
    }


def tree_from_dict(doc: dict) -> RegressionTree:
    if doc.get("format") != TREE_FORMAT:
        raise ValueError(f"not a serialized tree: format={doc.get('format')!r}")
    if doc.get("version") != TREE_FORMAT_VERSION:
        raise ValueError(f"unsupported tree version {doc.get('version')!r}")
    return RegressionTree(
        int(doc["n_features"]),
        np.asarray(doc["feature"], dtype=np.int32),
        np.asarray(doc["threshold"], dtype=float),
        np.asarray(doc["left"], dtype=np.int32),
        np.asarray(doc["right"], dtype=np.int32),
        np.asarray(doc["value"], dtype=float),
        np.asarray(doc["count"], dtype=np.int64),
    )
