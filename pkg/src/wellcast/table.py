"""Column-typed tabular data with an explicit per-cell missing mask.

A Table stores every column as float64: numeric columns hold the values
themselves, categorical columns hold dense integer codes with a per-column
code -> label list. Masked cells are canonicalized (NaN for numeric, -1 for
categorical) so that accidentally reading one is detectable downstream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

NUMERIC = "numeric"
CATEGORICAL = "categorical"

# Field content (stripped, lowercased) treated as a missing cell on ingest.
MISSING_TOKENS = {"", "na", "nan", "null"}


def is_missing_token(field: str) -> bool:
    return field.strip().lower() in MISSING_TOKENS


class Table:
    """Immutable column-major table.

    Parameters
    ----------
    names : column names, unique.
    kinds : NUMERIC or CATEGORICAL per column.
    values : array-like of shape (n_cols, n_rows), float64. Categorical
        columns hold integer codes in [0, cardinality).
    mask : boolean array, same shape; True marks a missing cell.
    labels : per-column list of category labels (None for numeric columns);
        list index is the code.
    """

    def __init__(self, names, kinds, values, mask, labels=None):
        self.names = list(names)
        self.kinds = list(kinds)
        values = np.array(values, dtype=float)
        mask = np.array(mask, dtype=bool)
        if values.ndim != 2:
            raise ValueError("values must be 2-D (n_cols, n_rows)")
        if mask.shape != values.shape:
            raise ValueError(f"mask shape {mask.shape} != values shape {values.shape}")
        if len(self.names) != values.shape[0] or len(self.kinds) != values.shape[0]:
            raise ValueError("names/kinds length must match the number of columns")
        if len(set(self.names)) != len(self.names):
            dupes = sorted({n for n in self.names if self.names.count(n) > 1})
            raise ValueError(f"duplicate column names: {dupes}")
        if labels is None:
            labels = [None] * len(self.names)
        self.labels = [None if lab is None else list(lab) for lab in labels]
        if len(self.labels) != len(self.names):
            raise ValueError("labels length must match the number of columns")

        for j, kind in enumerate(self.kinds):
            col, m = values[j], mask[j]
            if kind == NUMERIC:
                if self.labels[j] is not None:
                    raise ValueError(f"numeric column {self.names[j]!r} cannot carry labels")
                if np.isnan(col[~m]).any():
                    raise ValueError(f"NaN in observed cells of column {self.names[j]!r}")
                col[m] = np.nan
            elif kind == CATEGORICAL:
                lab = self.labels[j]
                if lab is None:
                    raise ValueError(f"categorical column {self.names[j]!r} requires labels")
                obs = col[~m]
                if obs.size:
                    if (obs != np.floor(obs)).any() or obs.min() < 0 or obs.max() >= len(lab):
                        raise ValueError(
                            f"column {self.names[j]!r}: codes must be integers in [0, {len(lab)})"
                        )
                col[m] = -1.0
            else:
                raise ValueError(f"unknown column kind {kind!r}")

        values.setflags(write=False)
        mask.setflags(write=False)
        self.values = values
        self.mask = mask

    @property
    def n_cols(self) -> int:
        return self.values.shape[0]

    @property
    def n_rows(self) -> int:
        return self.values.shape[1]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no column named {name!r}") from None

    def kind_of(self, name: str) -> str:
        return self.kinds[self.index(name)]

    def column_values(self, name: str) -> np.ndarray:
        return self.values[self.index(name)]

    def column_mask(self, name: str) -> np.ndarray:
        return self.mask[self.index(name)]

    def labels_of(self, name: str):
        return self.labels[self.index(name)]

    def numeric_names(self) -> list:
        return [n for n, k in zip(self.names, self.kinds) if k == NUMERIC]

    def categorical_names(self) -> list:
        return [n for n, k in zip(self.names, self.kinds) if k == CATEGORICAL]

    def take_rows(self, indices) -> "Table":
        """New Table holding the given rows (by position, order preserved)."""
        idx = np.asarray(indices, dtype=int)
        return Table(self.names, self.kinds, self.values[:, idx], self.mask[:, idx], self.labels)

    def to_matrix(self, names=None) -> np.ndarray:
        """Dense (n_rows, d) float matrix of fully observed numeric columns.

        Raises if a requested column is categorical or still has masked cells;
        model-facing code must impute first.
        """
        names = list(names) if names is not None else self.numeric_names()
        cols = []
        for name in names:
            j = self.index(name)
            if self.kinds[j] != NUMERIC:
                raise ValueError(f"column {name!r} is categorical; encode it first")
            if self.mask[j].any():
                raise ValueError(f"column {name!r} has missing cells; impute first")
            cols.append(self.values[j])
        if not cols:
            return np.empty((self.n_rows, 0))
        return np.column_stack(cols)

    def decoded_cell(self, row: int, name: str):
        """Observed cell content: float for numeric, label for categorical, None if masked."""
        j = self.index(name)
        if self.mask[j, row]:
            return None
        v = self.values[j, row]
        if self.kinds[j] == CATEGORICAL:
            return self.labels[j][int(v)]
        return float(v)

    def equals(self, other: "Table") -> bool:
        """Exact structural equality (names, kinds, labels, masks, observed cells)."""
        return (
            isinstance(other, Table)
            and self.names == other.names
            and self.kinds == other.kinds
            and self.labels == other.labels
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    def __repr__(self):
        return f"Table({self.n_rows} rows x {self.n_cols} cols)"


@dataclass(frozen=True)
class ColumnStats:
    """Summary of one column; moments are None when undefined (all cells masked)."""

    name: str
    kind: str
    missing_fraction: float
    mean: float | None = None
    std: float | None = None
    min: float | None = None
    max: float | None = None
    cardinality: int | None = None


def load_csv(path, schema_hints=None) -> Table:
    """Read a headered, RFC-4180-quoted, UTF-8 CSV into a Table.

    Empty fields and the tokens NA / NaN / null (case-insensitive) become
    masked cells. A column is numeric iff every non-missing field parses as a
    decimal number; otherwise categorical with codes in first-appearance
    order. ``schema_hints`` maps column names to NUMERIC / CATEGORICAL and
    overrides inference.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = []
        for row in reader:
            if not row and len(header) == 1:
                row = [""]  # blank line under a single-column header = one missing field
            if len(row) != len(header):
                raise ValueError(
                    f"{path}: row {len(rows) + 1} has {len(row)} fields, expected {len(header)}"
                )
            rows.append(row)

    hints = dict(schema_hints or {})
    unknown = sorted(set(hints) - set(header))
    if unknown:
        raise ValueError(f"schema_hints name unknown columns: {unknown}")

    n_rows, n_cols = len(rows), len(header)
    values = np.zeros((n_cols, n_rows))
    mask = np.zeros((n_cols, n_rows), dtype=bool)
    kinds, labels = [], []

    for j, name in enumerate(header):
        fields = [row[j] for row in rows]
        missing = [is_missing_token(f) for f in fields]
        observed = [f for f, m in zip(fields, missing) if not m]

        kind = hints.get(name)
        if kind is None:
            kind = NUMERIC if all(_parses_as_number(f) for f in observed) else CATEGORICAL
        elif kind not in (NUMERIC, CATEGORICAL):
            raise ValueError(f"schema hint for {name!r} must be {NUMERIC!r} or {CATEGORICAL!r}")

        mask[j] = missing
        if kind == NUMERIC:
            for i, (f, m) in enumerate(zip(fields, missing)):
                if m:
                    continue
                try:
                    values[j, i] = float(f)
                except ValueError:
                    raise ValueError(
                        f"{path}: column {name!r} hinted numeric but row {i + 1} "
                        f"holds {f!r}"
                    ) from None
            labels.append(None)
        else:
            codes: dict = {}
            for i, (f, m) in enumerate(zip(fields, missing)):
                if m:
                    continue
                values[j, i] = codes.setdefault(f, len(codes))
            labels.append(list(codes))
        kinds.append(kind)

    return Table(header, kinds, values, mask, labels)


def _parses_as_number(field: str) -> bool:
    try:
        float(field)
        return True
    except ValueError:
        return False


def write_csv(t: Table, path) -> None:
    """Write a Table in the dialect ``load_csv`` reads; masked cells become empty fields.

    Numeric cells use ``repr`` so a load/write/load round trip is value-exact.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(t.names)
        for i in range(t.n_rows):
            row = []
            for j in range(t.n_cols):
                if t.mask[j, i]:
                    row.append("")
                elif t.kinds[j] == CATEGORICAL:
                    row.append(t.labels[j][int(t.values[j, i])])
                else:
                    row.append(repr(float(t.values[j, i])))
            writer.writerow(row)


def column_stats(t: Table) -> list[ColumnStats]:
    """Per-column summaries over non-missing cells; std uses the population convention."""
    out = []
    for j, name in enumerate(t.names):
        m = t.mask[j]
        n_missing = int(m.sum())
        frac = n_missing / t.n_rows if t.n_rows else 0.0
        obs = t.values[j, ~m]
        if t.kinds[j] == CATEGORICAL:
            out.append(ColumnStats(name, CATEGORICAL, frac, cardinality=len(t.labels[j])))
        elif obs.size == 0:
            out.append(ColumnStats(name, NUMERIC, frac))
        else:
            out.append(
                ColumnStats(
                    name,
                    NUMERIC,
                    frac,
                    mean=float(obs.mean()),
                    std=float(obs.std()),
                    min=float(obs.min()),
                    max=float(obs.max()),
                )
            )
    return out


def select_columns(t: Table, keep) -> Table:
    """Project onto the named columns, in ``keep`` order; rows and masks untouched."""
    keep = list(keep)
    unknown = sorted(set(keep) - set(t.names))
    if unknown:
        raise KeyError(f"unknown columns: {unknown}")
    idx = [t.index(name) for name in keep]
    return Table(
        keep,
        [t.kinds[j] for j in idx],
        t.values[idx] if idx else np.empty((0, t.n_rows)),
        t.mask[idx] if idx else np.zeros((0, t.n_rows), dtype=bool),
        [t.labels[j] for j in idx],
    )
