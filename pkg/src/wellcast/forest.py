"""Bootstrap-averaged tree ensembles (random forest regression).

Each member tree gets its own RNG stream derived from (master seed, tree
index), so fits are bit-identical for any worker count and any single tree can
be regenerated from its recorded seed pair.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .cart import (
    ALL_FEATURES,
    TREE_FORMAT_VERSION,
    RegressionTree,
    TreeParams,
    fit_tree,
    predict_tree,
    predict_tree_matrix,
    tree_from_dict,
    tree_to_dict,
)


def _default_tree_params() -> TreeParams:
    return TreeParams(max_depth=23, min_samples_split=3, min_samples_leaf=2)


@dataclass(frozen=True)
class RfParams:
    n_estimators: int = 200
    tree: TreeParams = field(default_factory=_default_tree_params)
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class Forest:
    trees: list
    tree_seeds: list  # (master_seed, tree_index) pairs that regenerate each tree
    params: RfParams

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features


def bootstrap_sample(n: int, rng: np.random.Generator) -> np.ndarray:
    """n indices drawn uniformly with replacement from [0, n)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return rng.integers(0, n, size=n)


def _resolve_subset(tree: TreeParams, d: int) -> TreeParams:
    # Forests default to the classical regression subset of max(1, d//3);
    # "all" keeps every feature, an int passes through.
    if tree.feature_subset_size is None:
        return replace(tree, feature_subset_size=max(1, d // 3))
    if tree.feature_subset_size == ALL_FEATURES:
        return replace(tree, feature_subset_size=d)
    return tree


def fit_forest(X, y, p: RfParams, n_workers: int = 1, sample_fn=bootstrap_sample) -> Forest:
    """Fit n_estimators trees, each on its own bootstrap sample.

    ``sample_fn`` is injectable so tests can force an identity "bootstrap".
    Output is bit-identical regardless of ``n_workers``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    n, d = X.shape
    tree_params = _resolve_subset(p.tree, d)

    def fit_one(b: int) -> RegressionTree:
        rng = np.random.default_rng((p.seed, b))
        idx = sample_fn(n, rng)
        return fit_tree(X[idx], y[idx], tree_params, rng)

    indices = range(p.n_estimators)
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            trees = list(pool.map(fit_one, indices))
    else:
        trees = [fit_one(b) for b in indices]
    return Forest(trees, [(p.seed, b) for b in indices], p)


def predict_forest(f: Forest, x) -> float:
    """Arithmetic mean of the member-tree predictions for one feature vector."""
    return float(np.mean([predict_tree(t, x) for t in f.trees]))


def predict_forest_matrix(f: Forest, X) -> np.ndarray:
    preds = np.stack([predict_tree_matrix(t, X) for t in f.trees])
    return preds.mean(axis=0)


FOREST_FORMAT = "wellcast.forest"


def save_forest(f: Forest, path) -> None:
    doc = {
        "format": FOREST_FORMAT,
        "version": TREE_FORMAT_VERSION,
        "n_estimators": f.params.n_estimators,
        "seed": f.params.seed,
        "tree_seeds": [list(s) for s in f.tree_seeds],
        "tree_params": {
            "max_depth": f.params.tree.max_depth,
            "min_samples_split": f.params.tree.min_samples_split,
            "min_samples_leaf": f.params.tree.min_samples_leaf,
            "feature_subset_size": f.params.tree.feature_subset_size,
        },
        "trees": [tree_to_dict(t) for t in f.trees],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_forest(path) -> Forest:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != FOREST_FORMAT:
        raise ValueError(f"not a serialized forest: format={doc.get('format')!r}")
    tp = doc["tree_params"]
    params = RfParams(
        n_estimators=doc["n_estimators"],
        tree=TreeParams(
            max_depth=tp["max_depth"],
            min_samples_split=tp["min_samples_split"],
            min_samples_leaf=tp["min_samples_leaf"],
            feature_subset_size=tp["feature_subset_size"],
        ),
        seed=doc["seed"],
    )
    trees = [tree_from_dict(d) for d in doc["trees"]]
    return Forest(trees, [tuple(s) for s in doc["tree_seeds"]], params)
