"""Regression metrics and epistemic-uncertainty reports.

Uncertainty is quantified by re-splitting and re-fitting under seeds derived
from (master_seed, realization index) and summarizing the held-out RMSE
distribution with a normal-approximation confidence interval of the mean.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from statistics import NormalDist

import numpy as np

from .preprocess import SplitSpec, split
from .table import Table


@dataclass(frozen=True)
class MetricsReport:
    mse: float
    rmse: float
    mae: float
    r2: float | None
    pearson_r2: float | None
    n: int
    units: str = ""

    def to_dict(self) -> dict:
        return {
            "mse": self.mse,
            "rmse": self.rmse,
            "mae": self.mae,
            "r2": self.r2,
            "pearson_r2": self.pearson_r2,
            "n": self.n,
            "units": self.units,
        }


def metrics(y_true, y_pred, units: str = "") -> MetricsReport:
    """MSE, RMSE (= sqrt of that MSE), MAE, and R^2.

    R^2 is the coefficient of determination 1 - SSres/SStot about the mean of
    ``y_true`` (None when the target has zero variance); the squared Pearson
    correlation rides along as a secondary field.
    """
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError(f"shape mismatch: {y_true.shape} vs {y_pred.shape}")
    if len(y_true) == 0:
        raise ValueError("empty inputs")
    if not (np.isfinite(y_true).all() and np.isfinite(y_pred).all()):
        raise ValueError("inputs must be finite")

    residual = y_pred - y_true
    mse = float(np.mean(residual**2))
    rmse = math.sqrt(mse)
    mae = float(np.mean(np.abs(residual)))

    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0:
        r2 = None
    else:
        r2 = 1.0 - float(np.sum(residual**2)) / ss_tot

    st, sp = y_true.std(), y_pred.std()
    if st == 0 or sp == 0:
        pearson_r2 = None
    else:
        r = float(((y_true - y_true.mean()) * (y_pred - y_pred.mean())).mean() / (st * sp))
        pearson_r2 = r * r
    return MetricsReport(mse, rmse, mae, r2, pearson_r2, len(y_true), units)


def confidence_interval(samples, level: float = 0.95):
    """Normal-approximation CI of the mean: mean +/- z * s / sqrt(n), sample std s."""
    samples = np.asarray(samples, dtype=float)
    if len(samples) < 2:
        raise ValueError("need at least 2 samples")
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    if samples.min() == samples.max():
        c = float(samples[0])  # constant samples: avoid rounding dust from the mean
        return c, c
    mean = float(samples.mean())
    s = float(samples.std(ddof=1))
    z = NormalDist().inv_cdf(0.5 + level / 2.0)
    half = z * s / math.sqrt(len(samples))
    return mean - half, mean + half


def sturges_bin_count(n: int) -> int:
    return int(math.ceil(math.log2(n))) + 1 if n > 1 else 1


def histogram_bins(samples: np.ndarray):
    """(edges, counts) with the Sturges bin count; degenerate ranges widen to +/-0.5."""
    samples = np.asarray(samples, dtype=float)
    k = sturges_bin_count(len(samples))
    lo, hi = float(samples.min()), float(samples.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(samples, bins=k, range=(lo, hi))
    return edges, counts


@dataclass
class UncertaintyReport:
    rmses: np.ndarray
    n_realizations: int
    n_failed: int
    mean: float
    std: float
    ci_level: float
    ci_lo: float
    ci_hi: float
    bin_edges: np.ndarray
    bin_counts: np.ndarray
    method: str = "seed-varied-resplit"

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "n_realizations": self.n_realizations,
            "n_failed": self.n_failed,
            "mean": self.mean,
            "std": self.std,
            "ci_level": self.ci_level,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
            "rmses": self.rmses.tolist(),
            "bin_edges": self.bin_edges.tolist(),
            "bin_counts": self.bin_counts.tolist(),
        }

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def histogram_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write("bin_left,bin_right,count\n")
            for left, right, count in zip(self.bin_edges[:-1], self.bin_edges[1:], self.bin_counts):
                fh.write(f"{left!r},{right!r},{int(count)}\n")


def realization_seeds(master_seed: int, r: int):
    """(split_seed, model_seed) for realization r, independent of run order."""
    state = np.random.SeedSequence((master_seed, r)).generate_state(2, np.uint64)
    return int(state[0]), int(state[1])


def _assemble_report(rmses, n_failed, total, ci_level) -> UncertaintyReport:
    rmses = np.asarray(rmses, dtype=float)
    if n_failed > 0.1 * total:
        raise RuntimeError(f"{n_failed}/{total} realizations failed (over the 10% budget)")
    if len(rmses) < 2:
        raise ValueError("need at least 2 successful realizations")
    lo, hi = confidence_interval(rmses, ci_level)
    edges, counts = histogram_bins(rmses)
    constant = rmses.min() == rmses.max()
    return UncertaintyReport(
        rmses=rmses,
        n_realizations=len(rmses),
        n_failed=n_failed,
        mean=float(rmses[0]) if constant else float(rmses.mean()),
        std=float(rmses.std(ddof=1)),
        ci_level=ci_level,
        ci_lo=lo,
        ci_hi=hi,
        bin_edges=edges,
        bin_counts=counts,
    )


def realizations_from_runner(
    run_one,
    n_realizations: int,
    master_seed: int,
    ci_level: float = 0.95,
    n_workers: int = 1,
) -> UncertaintyReport:
    """Low-level driver: ``run_one(split_seed, model_seed) -> rmse`` per realization.

    Failures are recorded and excluded; more than 10% of them is an error.
    Results are assembled by realization index, so any worker count produces
    identical reports.
    """
    if n_realizations < 2:
        raise ValueError("n_realizations must be >= 2")

    def attempt(r: int):
        split_seed, model_seed = realization_seeds(master_seed, r)
        try:
            return float(run_one(split_seed, model_seed))
        except Exception:
            return None

    indices = range(n_realizations)
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(attempt, indices))
    else:
        results = [attempt(r) for r in indices]
    rmses = [v for v in results if v is not None]
    return _assemble_report(rmses, results.count(None), n_realizations, ci_level)


def realizations(
    trainer,
    data: Table,
    split_spec: SplitSpec,
    n_realizations: int,
    master_seed: int,
    ci_level: float = 0.95,
    n_workers: int = 1,
) -> UncertaintyReport:
    """Re-split / re-fit uncertainty for a tabular trainer.

    ``trainer(train_table, test_table, model_seed) -> (y_true, y_pred)``; the
    first split part is the training set and the last the test set. Each
    realization reseeds both the split and the model.
    """

    def run_one(split_seed: int, model_seed: int) -> float:
        parts = split(data, replace(split_spec, seed=split_seed))
        y_true, y_pred = trainer(parts[0], parts[-1], model_seed)
        return metrics(y_true, y_pred).rmse

    return realizations_from_runner(run_one, n_realizations, master_seed, ci_level, n_workers)
