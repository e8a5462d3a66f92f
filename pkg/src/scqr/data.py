"""Censored datasets, quantile grids and piecewise-constant coefficient processes."""
from __future__ import annotations

import csv
import json
import math
import os
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DataError

__all__ = [
    "CensoredDataset",
    "QuantileGrid",
    "CoefficientProcess",
    "load_dataset",
    "make_uniform_grid",
    "eval_process",
    "save_process",
    "load_process",
    "atomic_write_text",
]


def _frozen(a, dtype=float):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CensoredDataset:
    """Observations ``(y_i, delta_i, x_i)`` with ``y = min(z, C)``.

    ``X`` must carry the intercept as its first column.  A single-column
    (intercept-only) design is accepted so that sub-models can be fitted;
    files loaded from disk always have at least one covariate.
    """

    y: np.ndarray
    delta: np.ndarray
    X: np.ndarray
    columns: tuple = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        delta = np.asarray(self.delta, dtype=float).ravel()
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise DataError("X must be a 2-d array")
        n, p = X.shape
        if y.shape[0] != n or delta.shape[0] != n:
            raise DataError(f"length mismatch: y={y.shape[0]}, delta={delta.shape[0]}, X rows={n}")
        if n < 2:
            raise DataError("empty dataset" if n == 0 else "need at least 2 observations")
        if p < 1:
            raise DataError("design has no columns")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise DataError("non-finite values in y or X")
        if not np.all((delta == 0.0) | (delta == 1.0)):
            raise DataError("invalid status: event indicator must be 0 or 1")
        if not np.all(X[:, 0] == 1.0):
            raise DataError("first column of X must be the intercept (all ones)")
        cols = tuple(self.columns) if self.columns else ("intercept",) + tuple(
            f"x{j}" for j in range(1, p))
        if len(cols) != p:
            raise DataError(f"{len(cols)} column names for {p} columns")
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "delta", _frozen(delta))
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "columns", cols)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def censoring_rate(self) -> float:
        return 1.0 - float(self.delta.mean())

    def subset(self, rows) -> "CensoredDataset":
        rows = np.asarray(rows)
        return CensoredDataset(self.y[rows], self.delta[rows], self.X[rows], self.columns)

    def select(self, cols) -> "CensoredDataset":
        cols = [int(c) for c in cols]
        if not cols or cols[0] != 0:
            raise DataError("column selection must start with the intercept column 0")
        return CensoredDataset(self.y, self.delta, self.X[:, cols],
                               tuple(self.columns[c] for c in cols))


def load_dataset(path, y_col="y", status_col="status", covariates=None) -> CensoredDataset:
    """Read a CSV file with a header row into a :class:`CensoredDataset`.

    All columns other than ``y_col`` and ``status_col`` are covariates
    unless ``covariates`` names them explicitly.  An intercept column is
    prepended.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"data file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError("empty dataset") from None
        rows = [r for r in reader if any(c.strip() for c in r)]
    if not rows:
        raise DataError("empty dataset")
    for name in (y_col, status_col):
        if name not in header:
            raise DataError(f"column {name!r} not in header {header}")
    if covariates is None:
        covariates = [h for h in header if h not in (y_col, status_col)]
    missing = [c for c in covariates if c not in header]
    if missing:
        raise DataError(f"covariate columns not in header: {missing}")
    if not covariates:
        raise DataError("no covariate columns")

    idx = {h: j for j, h in enumerate(header)}
    wanted = [y_col, status_col] + list(covariates)
    vals = np.empty((len(rows), len(wanted)))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"row {i + 2}: expected {len(header)} fields, got {len(row)}")
        for j, name in enumerate(wanted):
            cell = row[idx[name]].strip()
            try:
                vals[i, j] = float(cell)
            except ValueError:
                raise DataError(f"row {i + 2}, column {name!r}: non-numeric value {cell!r}") from None
    status = vals[:, 1]
    if not np.all((status == 0.0) | (status == 1.0)):
        bad = int(np.flatnonzero((status != 0.0) & (status != 1.0))[0])
        raise DataError(f"invalid status {status[bad]!r} in row {bad + 2}; expected 0 or 1")
    Z = vals[:, 2:]
    for j, name in enumerate(covariates):
        if np.all(Z[:, j] == Z[0, j]):
            warnings.warn(f"covariate {name!r} is constant", stacklevel=2)
    X = np.column_stack([np.ones(len(rows)), Z])
    return CensoredDataset(vals[:, 0], status, X, ("intercept",) + tuple(covariates))


@dataclass(frozen=True, eq=False)
class QuantileGrid:
    """Strictly increasing quantile levels ``tau_0 < ... < tau_m`` in (0, 1)."""

    taus: np.ndarray
    deltaH: np.ndarray = field(init=False)

    def __post_init__(self):
        t = np.asarray(self.taus, dtype=float).ravel()
        if t.size == 0:
            raise ValueError("quantile grid is empty")
        if not (t[0] > 0.0 and t[-1] < 1.0):
            raise ValueError("grid levels must lie strictly inside (0, 1)")
        if np.any(np.diff(t) <= 0.0):
            raise ValueError("grid levels must be strictly increasing")
        # H(u) = -log(1 - u); increments H(tau_{j+1}) - H(tau_j)
        dH = np.log1p(-t[:-1]) - np.log1p(-t[1:])
        object.__setattr__(self, "taus", _frozen(t))
        object.__setattr__(self, "deltaH", _frozen(dH))

    @property
    def m(self) -> int:
        return self.taus.size - 1

    @property
    def tau_L(self) -> float:
        return float(self.taus[0])

    @property
    def tau_U(self) -> float:
        return float(self.taus[-1])

    @property
    def max_spacing(self) -> float:
        return float(np.max(np.diff(self.taus))) if self.m else 0.0

    @property
    def min_spacing(self) -> float:
        return float(np.min(np.diff(self.taus))) if self.m else 0.0

    def __len__(self):
        return self.taus.size

    def index(self, tau: float) -> int:
        """Index ``k`` with ``tau_k <= tau < tau_{k+1}`` (right-continuous)."""
        if not self.tau_L <= tau <= self.tau_U:
            raise ValueError(f"tau={tau} outside [{self.tau_L}, {self.tau_U}]")
        return int(np.searchsorted(self.taus, tau, side="right")) - 1

    def head(self, k: int) -> "QuantileGrid":
        """Grid truncated to its first ``k + 1`` levels."""
        return QuantileGrid(self.taus[: k + 1])


def make_uniform_grid(tau_L: float, tau_U: float, step: float) -> QuantileGrid:
    if not 0.0 < tau_L < tau_U < 1.0:
        raise ValueError(f"need 0 < tau_L < tau_U < 1, got tau_L={tau_L}, tau_U={tau_U}")
    if not 0.0 < step <= tau_U - tau_L + 1e-12:
        raise ValueError(f"step must lie in (0, tau_U - tau_L], got {step}")
    count = int(math.floor((tau_U - tau_L) / step + 1e-9))
    taus = np.round(tau_L + step * np.arange(count + 1), 12)
    if tau_U - taus[-1] > 1e-9:
        taus = np.append(taus, tau_U)
    else:
        taus[-1] = tau_U
    return QuantileGrid(taus)


@dataclass(eq=False)
class CoefficientProcess:
    """Right-continuous step function ``tau -> beta(tau)`` on a grid.

    Row ``k`` of ``betas`` is the coefficient vector at ``grid.taus[k]``.
    ``info`` carries fit diagnostics and is not part of the serialised
    payload.
    """

    grid: QuantileGrid
    betas: np.ndarray
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=float)
        if b.ndim != 2 or b.shape[0] != len(self.grid):
            raise ValueError(f"betas shape {b.shape} does not match grid of {len(self.grid)} levels")
        self.betas = b

    @property
    def p(self) -> int:
        return self.betas.shape[1]

    def __call__(self, tau: float) -> np.ndarray:
        return eval_process(self, tau)

    def to_dict(self) -> dict:
        return {"taus": [float(t) for t in self.grid.taus],
                "betas": [[float(v) for v in row] for row in self.betas]}

    @classmethod
    def from_dict(cls, d) -> "CoefficientProcess":
        return cls(QuantileGrid(d["taus"]), np.asarray(d["betas"], dtype=float))


def eval_process(proc: CoefficientProcess, tau: float) -> np.ndarray:
    return proc.betas[proc.grid.index(tau)].copy()


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def process_csv_text(proc: CoefficientProcess, columns=None) -> str:
    columns = columns or [f"b{j}" for j in range(proc.p)]
    lines = [",".join(["tau", *columns])]
    for t, row in zip(proc.grid.taus, proc.betas):
        lines.append(",".join(repr(float(v)) for v in (t, *row)))
    return "\n".join(lines) + "\n"


def save_process(proc: CoefficientProcess, path, columns=None) -> None:
    """Serialise as JSON (``.json``) or CSV (anything else); float repr is exact."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        atomic_write_text(path, json.dumps(proc.to_dict()) + "\n")
    else:
        atomic_write_text(path, process_csv_text(proc, columns))


def load_process(path) -> CoefficientProcess:
    path = Path(path)
    if path.suffix.lower() == ".json":
        d = json.loads(path.read_text())
        if "process" in d:
            d = d["process"]
        return CoefficientProcess.from_dict(d)
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return CoefficientProcess(QuantileGrid(arr[:, 0]), arr[:, 1:])
