"""Sequential Bayesian hyperparameter search with a Parzen-density sampler.

The sampler is univariate: after ``n_startup`` uniform trials it splits the
completed history per dimension into a best gamma-fraction ("good") and the
rest ("bad"), fits boundary-reflected Gaussian kernel densities l(x) and g(x)
(smoothed counts for categorical dimensions), draws candidates from l and
keeps the one maximizing l/g. Log-uniform dimensions are modeled in log space;
integer dimensions round with clamping. Per-trial RNG streams derive from
(seed, trial id), so a study replays bit-exactly and can resume from its log.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .boosting import GbmParams, fit_gbm, predict_gbm_matrix
from .cart import TreeParams
from .forest import RfParams, fit_forest, predict_forest_matrix
from .table import Table


@dataclass(frozen=True)
class IntUniform:
    lo: int
    hi: int

    def __post_init__(self):
        if self.lo >= self.hi:
            raise ValueError("lo must be < hi")


@dataclass(frozen=True)
class FloatUniform:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo >= self.hi:
            raise ValueError("lo must be < hi")


@dataclass(frozen=True)
class FloatLogUniform:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo <= 0:
            raise ValueError("log-uniform requires lo > 0")
        if self.lo >= self.hi:
            raise ValueError("lo must be < hi")


@dataclass(frozen=True)
class Categorical:
    options: tuple

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(self.options))
        if len(self.options) < 1:
            raise ValueError("need at least one option")


@dataclass
class Trial:
    trial_id: int
    params: dict
    value: float | None
    status: str  # "complete" | "failed"


@dataclass
class Study:
    space: dict
    seed: int
    n_startup: int = 10
    gamma_fraction: float = 0.25
    n_candidates: int = 24
    trials: list = field(default_factory=list)

    @property
    def best_trial(self) -> Trial:
        complete = [t for t in self.trials if t.status == "complete"]
        if not complete:
            raise ValueError("study has no complete trials")
        return min(complete, key=lambda t: t.value)


def _uniform_draw(dim, rng: np.random.Generator):
    if isinstance(dim, IntUniform):
        return int(rng.integers(dim.lo, dim.hi + 1))
    if isinstance(dim, FloatUniform):
        return float(rng.uniform(dim.lo, dim.hi))
    if isinstance(dim, FloatLogUniform):
        return float(np.exp(rng.uniform(np.log(dim.lo), np.log(dim.hi))))
    if isinstance(dim, Categorical):
        return dim.options[int(rng.integers(len(dim.options)))]
    raise TypeError(f"unknown dimension type {type(dim).__name__}")


def _to_model_space(dim, value):
    if isinstance(dim, FloatLogUniform):
        return math.log(value)
    if isinstance(dim, IntUniform):
        return float(value)
    return value


def _from_model_space(dim, value):
    if isinstance(dim, FloatLogUniform):
        return float(min(max(math.exp(value), dim.lo), dim.hi))
    if isinstance(dim, IntUniform):
        return int(min(max(round(value), dim.lo), dim.hi))
    if isinstance(dim, FloatUniform):
        return float(min(max(value, dim.lo), dim.hi))
    return value


def _bounds_in_model_space(dim):
    if isinstance(dim, FloatLogUniform):
        return math.log(dim.lo), math.log(dim.hi)
    return float(dim.lo), float(dim.hi)


def _log_density(x: np.ndarray, points: np.ndarray, bandwidth: float, lo: float, hi: float):
    """Log of a Gaussian KDE reflected at both bounds, averaged over kernels."""
    centers = np.concatenate([points, 2 * lo - points, 2 * hi - points])
    z = (x[:, None] - centers[None, :]) / bandwidth
    log_kernels = -0.5 * z**2 - math.log(bandwidth * math.sqrt(2 * math.pi))
    peak = log_kernels.max(axis=1, keepdims=True)
    return (peak[:, 0] + np.log(np.exp(log_kernels - peak).sum(axis=1))) - math.log(len(points))


def _reflect(x: float, lo: float, hi: float) -> float:
    span = hi - lo
    if span <= 0:
        return lo
    # fold the real line into [lo, hi] by repeated reflection
    x = (x - lo) % (2 * span)
    return lo + (x if x <= span else 2 * span - x)


def tpe_suggest(study: Study) -> dict:
    """Parameter assignment for the next trial.

    Uniform for the first ``n_startup`` completed trials and whenever the
    history is too thin to split; density-ratio guided afterwards.
    """
    if not study.space:
        raise ValueError("search space is empty")
    rng = np.random.default_rng((study.seed, len(study.trials)))
    complete = [t for t in study.trials if t.status == "complete"]
    if len(complete) < max(study.n_startup, 2):
        return {name: _uniform_draw(dim, rng) for name, dim in study.space.items()}

    ranked = sorted(complete, key=lambda t: t.value)
    n_good = max(1, int(math.ceil(study.gamma_fraction * len(ranked))))
    good, bad = ranked[:n_good], ranked[n_good:]
    if not bad:
        return {name: _uniform_draw(dim, rng) for name, dim in study.space.items()}

    assignment = {}
    for name, dim in study.space.items():
        if isinstance(dim, Categorical):
            k = len(dim.options)
            good_counts = np.ones(k)
            bad_counts = np.ones(k)
            for t in good:
                good_counts[dim.options.index(t.params[name])] += 1
            for t in bad:
                bad_counts[dim.options.index(t.params[name])] += 1
            l_prob = good_counts / good_counts.sum()
            g_prob = bad_counts / bad_counts.sum()
            cand = rng.choice(k, size=study.n_candidates, p=l_prob)
            ratio = np.log(l_prob[cand]) - np.log(g_prob[cand])
            assignment[name] = dim.options[int(cand[int(np.argmax(ratio))])]
            continue

        lo, hi = _bounds_in_model_space(dim)
        span = hi - lo
        good_pts = np.array([_to_model_space(dim, t.params[name]) for t in good])
        bad_pts = np.array([_to_model_space(dim, t.params[name]) for t in bad])
        bw_good = max(span / math.sqrt(len(good_pts)), 1e-6 * span)
        bw_bad = max(span / math.sqrt(len(bad_pts)), 1e-6 * span)

        centers = good_pts[rng.integers(len(good_pts), size=study.n_candidates)]
        cand = np.array(
            [_reflect(c + bw_good * rng.standard_normal(), lo, hi) for c in centers]
        )
        ratio = _log_density(cand, good_pts, bw_good, lo, hi) - _log_density(
            cand, bad_pts, bw_bad, lo, hi
        )
        assignment[name] = _from_model_space(dim, float(cand[int(np.argmax(ratio))]))
    return assignment


def make_rf_params(assignment: dict, seed: int = 0) -> RfParams:
    tree = TreeParams(
        max_depth=int(assignment.get("max_depth", 23)),
        min_samples_split=int(assignment.get("min_samples_split", 3)),
        min_samples_leaf=int(assignment.get("min_samples_leaf", 2)),
        feature_subset_size=assignment.get("feature_subset_size"),
    )
    return RfParams(n_estimators=int(assignment.get("n_estimators", 200)), tree=tree, seed=seed)


def make_gbm_params(assignment: dict, seed: int = 0) -> GbmParams:
    defaults = GbmParams(seed=seed)
    fields = (
        "learning_rate", "n_estimators", "max_depth", "subsample", "colsample_bytree",
        "min_child_weight", "gamma", "reg_alpha", "reg_lambda",
    )
    kwargs = {f: assignment[f] for f in fields if f in assignment}
    for int_field in ("n_estimators", "max_depth", "min_child_weight"):
        if int_field in kwargs:
            kwargs[int_field] = int(kwargs[int_field])
    return replace(defaults, **kwargs)


def default_rf_space() -> dict:
    return {
        "n_estimators": IntUniform(50, 500),
        "max_depth": IntUniform(2, 32),
        "min_samples_split": IntUniform(2, 10),
        "min_samples_leaf": IntUniform(1, 10),
    }


def default_gbm_space() -> dict:
    return {
        "learning_rate": FloatLogUniform(1e-3, 0.3),
        "max_depth": IntUniform(3, 12),
        "n_estimators": IntUniform(100, 1000),
        "subsample": FloatUniform(0.5, 1.0),
        "colsample_bytree": FloatUniform(0.5, 1.0),
        "min_child_weight": IntUniform(1, 10),
        "gamma": FloatUniform(0.0, 1.0),
        "reg_alpha": FloatUniform(0.0, 1.0),
    }


def kfold_indices(n: int, k: int, seed: int) -> list:
    """Deterministic shuffled k-fold partition; earlier folds absorb the remainder."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k:
        raise ValueError(f"cannot form {k} folds from {n} rows")
    perm = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, k)
    folds = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(perm[start : start + size])
        start += size
    return folds


def _fit_predict(model_kind: str, assignment: dict, X_tr, y_tr, X_va, seed: int):
    if model_kind == "rf":
        model = fit_forest(X_tr, y_tr, make_rf_params(assignment, seed=seed))
        return predict_forest_matrix(model, X_va)
    if model_kind == "gbm":
        model = fit_gbm(X_tr, y_tr, make_gbm_params(assignment, seed=seed))
        return predict_gbm_matrix(model, X_va)
    raise ValueError(f"unknown model kind {model_kind!r}")


def table_to_xy(train: Table, response: str):
    features = [n for n in train.names if n != response]
    bad = [n for n in features if train.kind_of(n) != "numeric"]
    if bad:
        raise ValueError(f"non-numeric feature columns (encode first): {bad}")
    X = train.to_matrix(features)
    j = train.index(response)
    if train.mask[j].any():
        raise ValueError(f"response column {response!r} has missing cells")
    return X, np.array(train.values[j]), features


def kfold_cv_objective(
    model_kind: str, params: dict, train: Table, response: str, k: int = 5, seed: int = 0
) -> float:
    """Mean held-out-fold MSE of the model refit on each fold complement.

    Folds come from ``kfold_indices(n, k, seed)``; the fold-f model seed derives
    from (seed, f) so the objective is a deterministic function of
    (params, data, seed).
    """
    X, y, _ = table_to_xy(train, response)
    folds = kfold_indices(len(y), k, seed)
    mses = []
    for f, fold in enumerate(folds):
        rest = np.concatenate([folds[i] for i in range(k) if i != f])
        model_seed = int(np.random.SeedSequence((seed, f)).generate_state(1, np.uint64)[0])
        pred = _fit_predict(model_kind, params, X[rest], y[rest], X[fold], model_seed)
        mses.append(float(np.mean((pred - y[fold]) ** 2)))
    return float(np.mean(mses))


def optimize(
    space: dict,
    objective,
    n_trials: int,
    seed: int,
    n_startup: int = 10,
    gamma_fraction: float = 0.25,
    n_candidates: int = 24,
    log_path=None,
    resume: bool = False,
    n_workers: int = 1,
) -> Study:
    """Run the suggest/evaluate loop against an arbitrary objective(params) -> float.

    With ``log_path`` every finished trial is appended as one JSON line; with
    ``resume`` an existing log is replayed first and only the remaining trials
    run. ``n_workers`` > 1 evaluates suggestion batches concurrently, which is
    faster but not replay-identical to the sequential mode.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    study = Study(dict(space), seed, n_startup, gamma_fraction, n_candidates)
    if resume and log_path and os.path.exists(log_path):
        for trial in read_trial_log(log_path):
            study.trials.append(trial)

    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        while len(study.trials) < n_trials:
            batch = 1 if n_workers <= 1 else min(n_workers, n_trials - len(study.trials))
            suggestions = []
            for _ in range(batch):
                params = tpe_suggest(study)
                trial = Trial(len(study.trials), params, None, "pending")
                study.trials.append(trial)
                suggestions.append(trial)

            def evaluate(trial: Trial):
                try:
                    value = float(objective(trial.params))
                    trial.value, trial.status = value, "complete"
                except Exception:
                    trial.value, trial.status = None, "failed"

            if batch == 1:
                evaluate(suggestions[0])
            else:
                with ThreadPoolExecutor(max_workers=n_workers) as pool:
                    list(pool.map(evaluate, suggestions))
            if log_fh:
                for trial in suggestions:
                    log_fh.write(json.dumps(_trial_doc(trial), sort_keys=True) + "\n")
                log_fh.flush()
    finally:
        if log_fh:
            log_fh.close()

    if all(t.status == "failed" for t in study.trials):
        raise RuntimeError("all trials failed")
    return study


def run_study(
    model_kind: str,
    space: dict,
    train: Table,
    response: str,
    n_trials: int = 100,
    seed: int = 0,
    k: int = 5,
    **kwargs,
) -> Study:
    """Tune an RF or GBM against the k-fold CV MSE objective on ``train``."""

    def objective(params: dict) -> float:
        return kfold_cv_objective(model_kind, params, train, response, k=k, seed=seed)

    return optimize(space, objective, n_trials, seed, **kwargs)


def _trial_doc(t: Trial) -> dict:
    return {"trial_id": t.trial_id, "params": t.params, "value": t.value, "status": t.status}


def read_trial_log(path) -> list:
    trials = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            trials.append(Trial(doc["trial_id"], doc["params"], doc["value"], doc["status"]))
    return trials
