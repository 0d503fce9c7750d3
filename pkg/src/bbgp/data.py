"""CSV ingestion, z-score normalization, train/test splitting and synthetic GP data."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConstantColumn, DataError, MissingTarget, ParseError
from .kernel import kernel_matrix
from .linalg import cholesky

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    """Inputs, targets and the bookkeeping needed to undo normalization.

    ``x_mean``/``x_std``/``y_mean``/``y_std`` are None until :func:`normalize`
    is applied; ``train_idx``/``test_idx`` are None until :func:`split`.
    """

    X: np.ndarray
    y: np.ndarray
    feature_names: tuple = ()
    target_name: str = "y"
    x_mean: np.ndarray | None = None
    x_std: np.ndarray | None = None
    y_mean: float | None = None
    y_std: float | None = None
    train_idx: np.ndarray | None = None
    test_idx: np.ndarray | None = None

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def dim(self):
        return self.X.shape[1]

    @property
    def normalized(self):
        return self.y_mean is not None

    def train(self):
        idx = self._require_split()[0]
        return self.X[idx], self.y[idx]

    def test(self):
        idx = self._require_split()[1]
        return self.X[idx], self.y[idx]

    def _require_split(self):
        if self.train_idx is None:
            raise DataError("dataset has not been split")
        return self.train_idx, self.test_idx

    def denormalize_y(self, y):
        if not self.normalized:
            return np.asarray(y, dtype=float)
        return np.asarray(y, dtype=float) * self.y_std + self.y_mean

    def raw_y(self):
        return self.denormalize_y(self.y)


def load_csv(path, target=-1, header=True):
    """Read a numeric CSV file; ``target`` is a column name or (possibly negative) index.

    Raises
    ------
    DataError
        Missing or empty file.
    ParseError
        Non-numeric or non-finite cell; ``row`` is the 1-based data row.
    MissingTarget
        Unknown target column.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such data file: {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if header:
        if not rows:
            raise DataError(f"{path}: empty file")
        names = [c.strip() for c in rows[0]]
        rows = rows[1:]
    else:
        names = [f"x{j}" for j in range(len(rows[0]))] if rows else []
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(names)
    values = np.empty((len(rows), width))
    for i, row in enumerate(rows, start=1):
        if len(row) != width:
            raise ParseError(f"{path}: row {i} has {len(row)} fields, expected {width}", row=i)
        for j, cell in enumerate(row):
            try:
                values[i - 1, j] = float(cell)
            except ValueError:
                raise ParseError(f"{path}: row {i}, column {names[j]!r}: cannot parse {cell!r}", row=i,
                                 column=names[j]) from None
            if not math.isfinite(values[i - 1, j]):
                raise ParseError(f"{path}: row {i}, column {names[j]!r}: non-finite value", row=i, column=names[j])

    if isinstance(target, str) and not _is_int(target):
        if target not in names:
            raise MissingTarget(f"{path}: no column named {target!r} (columns: {', '.join(names)})")
        t = names.index(target)
    else:
        t = int(target)
        if not -width <= t < width:
            raise MissingTarget(f"{path}: target index {t} out of range for {width} columns")
        t %= width
    keep = [j for j in range(width) if j != t]
    log.info("loaded %s: %d rows, %d columns", path, len(rows), width)
    return Dataset(values[:, keep], values[:, t].copy(), tuple(names[j] for j in keep), names[t])


def _is_int(s):
    try:
        int(s)
    except ValueError:
        return False
    return True


def split(ds, seed=0, train_fraction=2 / 3):
    """Random split with the first ceil(2n/3) rows of a seeded permutation as training rows."""
    if ds.n < 3:
        raise DataError("need at least 3 rows to split")
    perm = np.random.default_rng(seed).permutation(ds.n)
    n_train = math.ceil(train_fraction * ds.n - 1e-9)
    return replace(ds, train_idx=np.sort(perm[:n_train]), test_idx=np.sort(perm[n_train:]))


def normalize(ds, drop_constant=False):
    """Z-score inputs and targets using training-row statistics (all rows if unsplit).

    Constant input columns raise :class:`ConstantColumn`, or are dropped with a
    warning when ``drop_constant`` is set. A constant target always raises.
    """
    if ds.normalized:
        raise DataError("dataset is already normalized")
    rows = ds.train_idx if ds.train_idx is not None else np.arange(ds.n)
    X, y = ds.X, ds.y
    x_mean = X[rows].mean(axis=0)
    x_std = X[rows].std(axis=0)
    names = list(ds.feature_names) or [f"x{j}" for j in range(ds.dim)]
    constant = [j for j in range(ds.dim) if not x_std[j] > 0]
    if constant:
        if not drop_constant:
            raise ConstantColumn(names[constant[0]])
        log.warning("dropping constant columns: %s", ", ".join(names[j] for j in constant))
        keep = [j for j in range(ds.dim) if j not in constant]
        X, x_mean, x_std = X[:, keep], x_mean[keep], x_std[keep]
        names = [names[j] for j in keep]
        if not keep:
            raise DataError("every input column is constant")
    y_mean = float(y[rows].mean())
    y_std = float(y[rows].std())
    if not y_std > 0:
        raise ConstantColumn(ds.target_name)
    return replace(ds, X=(X - x_mean) / x_std, y=(y - y_mean) / y_std, feature_names=tuple(names),
                   x_mean=x_mean, x_std=x_std, y_mean=y_mean, y_std=y_std)


def synth_gp(n, dim, hp, seed=0):
    """Draw X ~ U[0,1]^D and y ~ N(mean, K) through a Cholesky factor of K."""
    if n > 4096:
        raise ValueError("synthetic sampling is dense; n must be <= 4096")
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, dim))
    L = cholesky(kernel_matrix(X, hp))
    y = hp.mean + L @ rng.standard_normal(n)
    return Dataset(X, y, tuple(f"x{j}" for j in range(dim)), "y")


def save_csv(ds, path):
    """Write raw (un-normalized) inputs and targets with a header row."""
    X = ds.X * ds.x_std + ds.x_mean if ds.normalized else ds.X
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(ds.feature_names) + [ds.target_name])
        for xi, yi in zip(X, ds.raw_y()):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])
    return path
