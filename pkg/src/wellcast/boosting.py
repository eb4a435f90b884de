"""Regularized additive tree boosting for squared-error regression.

Each stage fits one tree to the current residual gradients (g = prediction -
target, unit hessians) on a row/column subsample, scoring candidate splits by
the second-order gain

    gain = 1/2 * [GL^2/(HL+lambda) + GR^2/(HR+lambda) - (GL+GR)^2/(HL+HR+lambda)] - gamma

and assigning each leaf the L1-soft-thresholded weight

    w = -sign(G) * max(0, |G| - alpha) / (H + lambda).

A split is admitted only when gain > 0 and both children carry at least
``min_child_weight`` hessian mass. The ensemble prediction is
base_value + learning_rate * sum of routed leaf weights.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .cart import (
    TREE_FORMAT_VERSION,
    RegressionTree,
    _TreeBuilder,
    predict_tree_matrix,
    tree_from_dict,
    tree_to_dict,
)


@dataclass(frozen=True)
class GbmParams:
    learning_rate: float = 0.0219
    n_estimators: int = 937
    max_depth: int | None = 9
    subsample: float = 0.734
    colsample_bytree: float = 0.708
    min_child_weight: float = 5.0
    gamma: float = 0.275
    reg_alpha: float = 0.998
    reg_lambda: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.n_estimators < 0:
            raise ValueError("n_estimators must be >= 0")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1 (or None)")
        for name in ("subsample", "colsample_bytree"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must be in (0, 1]")
        for name in ("min_child_weight", "gamma", "reg_alpha", "reg_lambda"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class GbmEnsemble:
    base_value: float
    learning_rate: float
    trees: list = field(default_factory=list)  # leaf values are unscaled weights
    stage_rows: list = field(default_factory=list)  # per-stage row subsample record
    stage_cols: list = field(default_factory=list)  # per-stage column subsample record
    n_features: int = 0


def leaf_weight(grad_sum: float, hess_sum: float, p: GbmParams) -> float:
    """L1-soft-thresholded, L2-damped optimal leaf weight."""
    shrunk = max(0.0, abs(grad_sum) - p.reg_alpha)
    if shrunk == 0.0:
        return 0.0
    return -math.copysign(shrunk, grad_sum) / (hess_sum + p.reg_lambda)


def split_gain(gl: float, hl: float, gr: float, hr: float, p: GbmParams) -> float:
    """Second-order gain of splitting (gl+gr, hl+hr) into the two children."""
    lam = p.reg_lambda
    return 0.5 * (
        gl * gl / (hl + lam) + gr * gr / (hr + lam) - (gl + gr) ** 2 / (hl + hr + lam)
    ) - p.gamma


def split_admissible(gl: float, hl: float, gr: float, hr: float, p: GbmParams) -> bool:
    return split_gain(gl, hl, gr, hr, p) > 0 and min(hl, hr) >= p.min_child_weight


def _best_gain_split(X, g, indices, features, p: GbmParams):
    """Largest admissible gain over midpoint candidates, or None.

    Vectorized across the drawn features; the first maximum in (feature-major,
    threshold-minor) order realizes the (lower feature, lower threshold)
    tie-break.
    """
    m = len(indices)
    if m < 2:
        return None
    lam = p.reg_lambda
    xs = X[np.ix_(indices, features)]  # (m, k)
    gs = g[indices]
    order = np.argsort(xs, axis=0, kind="stable")
    sx = np.take_along_axis(xs, order, axis=0)
    sg = gs[order]
    cg = np.cumsum(sg, axis=0)
    G, H = cg[-1], float(m)

    hl = np.arange(1, m, dtype=float)[:, None]
    hr = H - hl
    gl = cg[:-1]
    gr = G - gl
    valid = (sx[:-1] < sx[1:]) & (np.minimum(hl, hr) >= p.min_child_weight)
    if not valid.any():
        return None
    gain = 0.5 * (gl**2 / (hl + lam) + gr**2 / (hr + lam) - G**2 / (H + lam)) - p.gamma
    gain = np.where(valid, gain, -np.inf)

    flat = int(np.argmax(gain.T.ravel()))  # feature-major scan order
    col, q = divmod(flat, m - 1)
    if not gain[q, col] > 0:
        return None
    thr = 0.5 * (sx[q, col] + sx[q + 1, col])
    return (float(gain[q, col]), int(features[col]), thr)


def _grow_stage_tree(X, g, rows, cols, p: GbmParams) -> RegressionTree:
    builder = _TreeBuilder()
    root = builder.add()
    stack = [(root, rows, 0)]
    while stack:
        node, indices, depth = stack.pop()
        gsum = float(g[indices].sum())
        hsum = float(len(indices))
        builder.value[node] = leaf_weight(gsum, hsum, p)
        builder.count[node] = len(indices)

        if p.max_depth is not None and depth >= p.max_depth:
            continue
        gnode = g[indices]
        if gnode.min() == gnode.max():
            continue  # equal gradients admit no positive gain for lambda, gamma >= 0
        best = _best_gain_split(X, g, indices, cols, p)
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
        stack.append((right, indices[~go_left], depth + 1))
        stack.append((left, indices[go_left], depth + 1))
    return builder.finish(X.shape[1])


def fit_gbm(X, y, p: GbmParams) -> GbmEnsemble:
    """Fit the additive ensemble; stage s draws its subsamples from a stream
    derived from (seed, s), rows before columns."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least 2 rows")
    if not np.isfinite(y).all():
        raise ValueError("target contains non-finite values")
    if not np.isfinite(X).all():
        raise ValueError("features contain non-finite values (impute upstream)")

    base = float(y.mean())
    pred = np.full(n, base)
    ens = GbmEnsemble(base_value=base, learning_rate=p.learning_rate, n_features=d)
    n_rows = int(math.ceil(p.subsample * n))
    n_cols = int(math.ceil(p.colsample_bytree * d))
    for stage in range(p.n_estimators):
        rng = np.random.default_rng((p.seed, stage))
        rows = np.sort(rng.choice(n, size=n_rows, replace=False))
        cols = np.sort(rng.choice(d, size=n_cols, replace=False))
        g = pred - y
        tree = _grow_stage_tree(X, g, rows, cols, p)
        ens.trees.append(tree)
        ens.stage_rows.append(rows)
        ens.stage_cols.append(cols)
        pred += p.learning_rate * predict_tree_matrix(tree, X)
    return ens


def predict_gbm(m: GbmEnsemble, x) -> float:
    """base_value + learning_rate * sum of routed leaf weights."""
    x = np.asarray(x, dtype=float)
    if x.shape != (m.n_features,):
        raise ValueError(f"expected feature vector of length {m.n_features}, got shape {x.shape}")
    return float(predict_gbm_matrix(m, x.reshape(1, -1))[0])


def predict_gbm_matrix(m: GbmEnsemble, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != m.n_features:
        raise ValueError(f"expected (n, {m.n_features}) matrix, got shape {X.shape}")
    out = np.full(len(X), m.base_value)
    for tree in m.trees:
        out += m.learning_rate * predict_tree_matrix(tree, X)
    return out


def training_curve(X, y, p: GbmParams) -> np.ndarray:
    """Training MSE after each stage (index 0 = base value only)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    ens = fit_gbm(X, y, p)
    pred = np.full(len(y), ens.base_value)
    curve = [float(np.mean((pred - y) ** 2))]
    for tree in ens.trees:
        pred += ens.learning_rate * predict_tree_matrix(tree, X)
        curve.append(float(np.mean((pred - y) ** 2)))
    return np.asarray(curve)


GBM_FORMAT = "wellcast.gbm"


def save_gbm(m: GbmEnsemble, path) -> None:
    doc = {
        "format": GBM_FORMAT,
        "version": TREE_FORMAT_VERSION,
        "base_value": m.base_value,
        "learning_rate": m.learning_rate,
        "n_features": m.n_features,
        "stage_rows": [r.tolist() for r in m.stage_rows],
        "stage_cols": [c.tolist() for c in m.stage_cols],
        "trees": [tree_to_dict(t) for t in m.trees],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_gbm(path) -> GbmEnsemble:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != GBM_FORMAT:
        raise ValueError(f"not a serialized boosting model: format={doc.get('format')!r}")
    return GbmEnsemble(
        base_value=float(doc["base_value"]),
        learning_rate=float(doc["learning_rate"]),
        trees=[tree_from_dict(d) for d in doc["trees"]],
        stage_rows=[np.asarray(r, dtype=int) for r in doc["stage_rows"]],
        stage_cols=[np.asarray(c, dtype=int) for c in doc["stage_cols"]],
        n_features=int(doc["n_features"]),
    )
