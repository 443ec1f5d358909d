"""CSV ingestion, unit-cube scaling and train/holdout splits."""
import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from dgpemu.errors import DegenerateColumn, DomainError, ParseError, SchemaError

MISSING_TOKENS = ("NA", "na", "NaN", "nan", "")


@dataclass(frozen=True)
class Scaling:
    """Per-column affine map ``(x - lo) / (hi - lo)`` to the unit cube."""

    lo: np.ndarray
    hi: np.ndarray

    def apply(self, X):
        X = np.asarray(X, dtype=float)
        return (X - self.lo) / (self.hi - self.lo)

    def invert(self, U):
        return self.lo + np.asarray(U, dtype=float) * (self.hi - self.lo)

    def to_dict(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["lo"], dtype=float), np.asarray(d["hi"], dtype=float))


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    columns: Tuple[str, ...]
    target: str = "y"
    scaling: Optional[Scaling] = field(default=None, compare=False)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if X.shape[0] == 1 and len(self.columns) == 1 and X.shape[1] != 1:
            X = X.T
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise DomainError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        if X.shape[1] != len(self.columns):
            raise DomainError("one column name per input dimension is required")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DomainError("dataset contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "columns", tuple(self.columns))

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def subset(self, idx):
        return replace(self, X=self.X[idx], y=self.y[idx])


def _parse(cell, na_as_zero):
    if na_as_zero and cell.strip() in MISSING_TOKENS:
        return 0.0
    return float(cell)


def load_csv(path, target_column="y", na_as_zero=False):
    """Read a headed CSV; every non-target column becomes an input.

    ``na_as_zero`` maps missing target cells (``NA``, empty) to 0.  Rows with
    any other non-finite or missing value are rejected and listed in the
    error.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not any(c.strip() for c in rows[0]):
        raise ParseError(f"{path}: missing header row")
    header = [c.strip() for c in rows[0]]
    if target_column not in header:
        raise SchemaError(f"{path}: target column {target_column!r} not in header {header}")
    t = header.index(target_column)
    inputs = [j for j in range(len(header)) if j != t]
    X, y, bad = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"{path}: line {lineno} has {len(row)} fields, expected {len(header)}")
        try:
            xs = [float(row[j]) for j in inputs]
            yv = _parse(row[t], na_as_zero)
        except ValueError:
            bad.append(lineno)
            continue
        if not (all(math.isfinite(v) for v in xs) and math.isfinite(yv)):
            bad.append(lineno)
            continue
        X.append(xs)
        y.append(yv)
    if bad:
        shown = ", ".join(map(str, bad[:20])) + (" ..." if len(bad) > 20 else "")
        raise ParseError(f"{path}: non-finite or non-numeric values on line(s) {shown}")
    if not y:
        raise ParseError(f"{path}: no data rows")
    return Dataset(np.array(X, dtype=float).reshape(len(y), len(inputs)), np.array(y),
                   tuple(header[j] for j in inputs), target_column)


def save_csv(path, ds):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(ds.columns) + [ds.target])
        for xi, yi in zip(ds.X, ds.y):
            w.writerow([f"{v:.17g}" for v in xi] + [f"{yi:.17g}"])


def scale_unit_cube(ds, record=None):
    """Map inputs to [0, 1]^d; ``record`` reuses an existing scaling."""
    if record is None:
        lo, hi = ds.X.min(axis=0), ds.X.max(axis=0)
        flat = np.flatnonzero(hi <= lo)
        if flat.size:
            names = [ds.columns[j] for j in flat]
            raise DegenerateColumn(f"constant column(s): {names}")
        record = Scaling(lo, hi)
    return replace(ds, X=record.apply(ds.X), scaling=record)


def unscale(ds):
    if ds.scaling is None:
        return ds
    return replace(ds, X=ds.scaling.invert(ds.X), scaling=None)


def holdout_split(ds, n_hold, stratify_on_nonzero=None, seed=0):
    """Random train/holdout split.

    ``stratify_on_nonzero`` is the number of holdout rows that must have a
    nonzero response (``None`` for a plain random split).
    """
    if not 0 <= n_hold < ds.n:
        raise DomainError(f"n_hold must lie in [0, {ds.n}), got {n_hold}")
    rng = np.random.default_rng(seed)
    if stratify_on_nonzero is None:
        hold = rng.permutation(ds.n)[:n_hold]
    else:
        k = int(stratify_on_nonzero)
        nz = np.flatnonzero(ds.y != 0)
        zero = np.flatnonzero(ds.y == 0)
        if not 0 <= k <= n_hold or k > nz.size or n_hold - k > zero.size:
            raise DomainError(
                f"cannot draw {k} nonzero and {n_hold - k} zero rows from "
                f"{nz.size} nonzero and {zero.size} zero rows"
            )
        hold = np.concatenate([rng.permutation(nz)[:k], rng.permutation(zero)[:n_hold - k]])
    hold = np.sort(hold)
    mask = np.ones(ds.n, dtype=bool)
    mask[hold] = False
    return ds.subset(np.flatnonzero(mask)), ds.subset(hold)
