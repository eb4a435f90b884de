"""Dataset preparation: missingness filtering, imputation, encoding, pruning, splits.

Every operation is a pure function of (inputs, seed): repeated calls produce
bit-identical Tables, and imputation never rewrites an originally observed cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .table import CATEGORICAL, NUMERIC, Table, select_columns


@dataclass(frozen=True)
class SplitSpec:
    """Row-partition request: fractions must sum to 1; mode is shuffled or chronological."""

    fractions: tuple
    seed: int = 0
    mode: str = "shuffled"
    order_column: str | None = None

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        object.__setattr__(self, "fractions", fr)
        if any(f < 0 for f in fr):
            raise ValueError("fractions must be non-negative")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1, got {sum(fr)}")
        if self.mode not in ("shuffled", "chronological"):
            raise ValueError(f"unknown split mode {self.mode!r}")
        if self.mode == "chronological" and self.order_column is None:
            raise ValueError("chronological mode requires order_column")


@dataclass(frozen=True)
class ScalerParams:
    """Per-column centering/scaling constants; scale is 1 where the fitted std was 0."""

    columns: tuple
    center: tuple
    scale: tuple

    def __post_init__(self):
        if any(s <= 0 for s in self.scale):
            raise ValueError("scale entries must be positive")


@dataclass(frozen=True)
class CorrMatrix:
    """Spearman rank correlations over numeric columns; NaN marks an undefined entry."""

    columns: tuple
    rho: np.ndarray

    def lookup(self, a: str, b: str) -> float:
        return float(self.rho[self.columns.index(a), self.columns.index(b)])


def missingness_filter(t: Table, threshold: float = 0.25) -> Table:
    """Drop columns whose missing fraction is at or above ``threshold``."""
    if not 0 < threshold <= 1:
        raise ValueError("threshold must be in (0, 1]")
    keep = [
        name
        for j, name in enumerate(t.names)
        if (t.mask[j].sum() / t.n_rows if t.n_rows else 0.0) < threshold
    ]
    return select_columns(t, keep)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties assigned the average of their positions."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(sx):
        j = i
        while j < len(sx) and sx[j] == sx[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j - 1) + 1.0
        i = j
    return ranks


def spearman_matrix(t: Table) -> CorrMatrix:
    """Pairwise-complete Spearman correlations of the numeric columns.

    For each column pair, rows observed in both are ranked (average ranks on
    ties) and Pearson-correlated. Pairs with fewer than 2 complete rows, or a
    constant member, get NaN.
    """
    names = t.numeric_names()
    d = len(names)
    rho = np.full((d, d), np.nan)
    cols = [t.column_values(n) for n in names]
    masks = [t.column_mask(n) for n in names]
    for a in range(d):
        rho[a, a] = 1.0
        for b in range(a + 1, d):
            both = ~(masks[a] | masks[b])
            if both.sum() < 2:
                continue
            ra = _average_ranks(cols[a][both])
            rb = _average_ranks(cols[b][both])
            sa, sb = ra.std(), rb.std()
            if sa == 0 or sb == 0:
                continue
            r = float(((ra - ra.mean()) * (rb - rb.mean())).mean() / (sa * sb))
            rho[a, b] = rho[b, a] = r
    return CorrMatrix(tuple(names), rho)


def prune_collinear(t: Table, c: CorrMatrix, cutoff: float = 0.95) -> Table:
    """Greedy collinearity pruning: for each correlated pair, drop the later column.

    Scans columns in matrix order; undefined correlations count as 0. Columns
    not present in the matrix (e.g. categoricals) are always kept.
    """
    if not 0 < cutoff <= 1:
        raise ValueError("cutoff must be in (0, 1]")
    dropped = set()
    names = list(c.columns)
    for a in range(len(names)):
        if names[a] in dropped:
            continue
        for b in range(a + 1, len(names)):
            if names[b] in dropped:
                continue
            r = c.rho[a, b]
            if not math.isnan(r) and abs(r) >= cutoff:
                dropped.add(names[b])
    return select_columns(t, [n for n in t.names if n not in dropped])


def one_hot_encode(t: Table, columns=None) -> Table:
    """Expand categorical columns into 0/1 indicator columns named ``col=label``.

    The indicator block replaces the original column in place, ordered by
    category code, so the code -> label mapping is recoverable from the block's
    names and order. A masked source cell masks the whole block for that row.
    """
    if columns is None:
        columns = t.categorical_names()
    columns = list(columns)
    for name in columns:
        if t.kind_of(name) != CATEGORICAL:
            raise ValueError(f"cannot one-hot encode numeric column {name!r}")
    target = set(columns)

    names, kinds, values, mask, labels = [], [], [], [], []
    for j, name in enumerate(t.names):
        if name not in target:
            names.append(name)
            kinds.append(t.kinds[j])
            values.append(t.values[j])
            mask.append(t.mask[j])
            labels.append(t.labels[j])
            continue
        src, src_mask = t.values[j], t.mask[j]
        for code, label in enumerate(t.labels[j]):
            names.append(f"{name}={label}")
            kinds.append(NUMERIC)
            values.append(np.where(~src_mask & (src == code), 1.0, 0.0))
            mask.append(src_mask.copy())
            labels.append(None)
    return Table(names, kinds, np.array(values), np.array(mask), labels)


def one_hot_groups(t: Table) -> dict:
    """Inverse-lookup helper: {original column: [labels...]} parsed from ``col=label`` names."""
    groups: dict = {}
    for name in t.names:
        if "=" in name:
            col, label = name.split("=", 1)
            groups.setdefault(col, []).append(label)
    return groups


def _observed_center_scale(values: np.ndarray, mask: np.ndarray):
    obs = values[~mask]
    if obs.size == 0:
        raise ValueError("column has no observed cells")
    center = float(obs.mean())
    scale = float(obs.std())
    return center, (scale if scale > 0 else 1.0)


def knn_impute(t: Table, k: int = 5) -> Table:
    """Fill missing cells from the k nearest rows.

    Row distance is Euclidean over the standardized numeric coordinates both
    rows observe, rescaled by sqrt(d / #shared) so rows with different
    missingness patterns are comparable. Candidate neighbors that lack the
    target column are skipped; numeric cells take the neighbor mean, categorical
    cells the neighbor majority (ties to the lowest code). With no usable
    neighbor the column mean / modal code is used.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not t.mask.any():
        return t

    num_idx = [j for j, kind in enumerate(t.kinds) if kind == NUMERIC]
    d = len(num_idx)
    n = t.n_rows
    if d:
        z = np.empty((n, d))
        observed = np.empty((n, d), dtype=bool)
        for col, j in enumerate(num_idx):
            m = t.mask[j]
            observed[:, col] = ~m
            if (~m).any():
                center, scale = _observed_center_scale(t.values[j], m)
                z[:, col] = (t.values[j] - center) / scale
            else:
                z[:, col] = 0.0
        z = np.where(observed, z, 0.0)
    else:
        observed = np.zeros((n, 0), dtype=bool)
        z = np.zeros((n, 0))

    fallback = {}
    for j in range(t.n_cols):
        obs = t.values[j, ~t.mask[j]]
        if obs.size == 0:
            raise ValueError(f"column {t.names[j]!r} is entirely missing; cannot impute")
        if t.kinds[j] == NUMERIC:
            fallback[j] = float(obs.mean())
        else:
            counts = np.bincount(obs.astype(int), minlength=len(t.labels[j]))
            fallback[j] = float(np.argmax(counts))

    values = np.array(t.values)
    row_ids = np.arange(n)
    for r in range(n):
        missing_cols = np.flatnonzero(t.mask[:, r])
        if missing_cols.size == 0:
            continue
        if d:
            shared = observed & observed[r]
            n_shared = shared.sum(axis=1)
            diff = np.where(shared, z - z[r], 0.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                dist = np.sqrt((diff**2).sum(axis=1) * d / n_shared)
            dist[n_shared == 0] = np.inf
        else:
            dist = np.full(n, np.inf)
        dist[r] = np.inf
        order = np.lexsort((row_ids, dist))

        for j in missing_cols:
            have = ~t.mask[j]
            picked = []
            for i in order:
                if not np.isfinite(dist[i]):
                    break
                if have[i]:
                    picked.append(i)
                    if len(picked) == k:
                        break
            if not picked:
                values[j, r] = fallback[j]
            elif t.kinds[j] == NUMERIC:
                values[j, r] = float(t.values[j, picked].mean())
            else:
                codes = t.values[j, picked].astype(int)
                counts = np.bincount(codes, minlength=len(t.labels[j]))
                values[j, r] = float(np.argmax(counts))

    # every missing cell is filled (fallback guarantees a value), so the mask clears
    return Table(t.names, t.kinds, values, np.zeros_like(t.mask), t.labels)


def iterative_impute(t: Table, max_rounds: int = 10, tol: float = 1e-3, ridge: float = 1e-3) -> Table:
    """Round-robin regression imputation of the numeric columns.

    Missing numerics start at their column mean; each incomplete column is then
    repeatedly re-predicted by ridge least squares (penalty ``ridge`` on the
    standardized design) fitted on the rows where that column was originally
    observed, until the largest standardized cell change drops below ``tol`` or
    ``max_rounds`` passes complete. Categorical cells are left untouched.
    """
    num_idx = [j for j, kind in enumerate(t.kinds) if kind == NUMERIC]
    if len(num_idx) < 2:
        raise ValueError("iterative imputation needs at least 2 numeric columns")

    n = t.n_rows
    d = len(num_idx)
    centers = np.empty(d)
    scales = np.empty(d)
    z = np.empty((n, d))
    miss = np.empty((n, d), dtype=bool)
    for col, j in enumerate(num_idx):
        m = t.mask[j]
        centers[col], scales[col] = _observed_center_scale(t.values[j], m)
        z[:, col] = (t.values[j] - centers[col]) / scales[col]
        z[m, col] = 0.0  # column mean in standardized units
        miss[:, col] = m

    incomplete = [c for c in range(d) if miss[:, c].any()]
    for _ in range(max_rounds):
        if not incomplete:
            break
        max_delta = 0.0
        for c in incomplete:
            others = [o for o in range(d) if o != c]
            fit = ~miss[:, c]
            X = z[fit][:, others]
            y = z[fit, c]
            xm = X.mean(axis=0)
            ym = y.mean()
            Xc = X - xm
            gram = Xc.T @ Xc + ridge * np.eye(len(others))
            try:
                beta = np.linalg.solve(gram, Xc.T @ (y - ym))
            except np.linalg.LinAlgError:
                continue  # keep previous round's values for this column
            rows = miss[:, c]
            pred = ym + (z[rows][:, others] - xm) @ beta
            delta = np.abs(pred - z[rows, c])
            if delta.size:
                max_delta = max(max_delta, float(delta.max()))
            z[rows, c] = pred
        if max_delta < tol:
            break

    values = np.array(t.values)
    mask = np.array(t.mask)
    for col, j in enumerate(num_idx):
        rows = miss[:, col]
        values[j, rows] = z[rows, col] * scales[col] + centers[col]
        mask[j, rows] = False
    return Table(t.names, t.kinds, values, mask, t.labels)


def split(t: Table, spec: SplitSpec) -> list:
    """Partition the rows into len(fractions) disjoint Tables.

    Shuffled mode permutes rows with the seed, then cuts contiguous blocks of
    floor(fraction * n) rows, remainder rows going to the first part.
    Chronological mode sorts (stably) by the order column instead.
    """
    n = t.n_rows
    parts = len(spec.fractions)
    if n < parts:
        raise ValueError(f"cannot split {n} rows into {parts} parts")
    if spec.mode == "shuffled":
        perm = np.random.default_rng(spec.seed).permutation(n)
    else:
        j = t.index(spec.order_column)
        if t.mask[j].any():
            raise ValueError(f"order column {spec.order_column!r} has missing cells")
        perm = np.argsort(t.values[j], kind="stable")

    sizes = [int(math.floor(f * n)) for f in spec.fractions]
    sizes[0] += n - sum(sizes)
    out = []
    start = 0
    for size in sizes:
        out.append(t.take_rows(perm[start : start + size]))
        start += size
    return out


def fit_scaler(fit_on: Table, columns=None) -> ScalerParams:
    """Center/scale constants (mean, population std; std 0 -> scale 1) per numeric column."""
    columns = list(columns) if columns is not None else fit_on.numeric_names()
    center, scale = [], []
    for name in columns:
        if fit_on.kind_of(name) != NUMERIC:
            raise ValueError(f"cannot standardize categorical column {name!r}")
        c, s = _observed_center_scale(fit_on.column_values(name), fit_on.column_mask(name))
        center.append(c)
        scale.append(s)
    return ScalerParams(tuple(columns), tuple(center), tuple(scale))


def standardize(t: Table, fit_on: Table | None = None):
    """z-score the numeric columns using statistics fitted on ``fit_on`` (default: t itself).

    Returns (transformed table, ScalerParams); ``destandardize`` inverts to
    within 1e-12.
    """
    params = fit_scaler(fit_on if fit_on is not None else t)
    return apply_scaler(t, params), params


def apply_scaler(t: Table, params: ScalerParams) -> Table:
    values = np.array(t.values)
    for name, center, scale in zip(params.columns, params.center, params.scale):
        j = t.index(name)
        obs = ~t.mask[j]
        values[j, obs] = (values[j, obs] - center) / scale
    return Table(t.names, t.kinds, values, t.mask, t.labels)


def destandardize(t: Table, params: ScalerParams) -> Table:
    values = np.array(t.values)
    for name, center, scale in zip(params.columns, params.center, params.scale):
        j = t.index(name)
        obs = ~t.mask[j]
        values[j, obs] = values[j, obs] * scale + center
    return Table(t.names, t.kinds, values, t.mask, t.labels)
