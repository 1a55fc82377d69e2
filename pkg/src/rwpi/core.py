"""Shared types: datasets, transport costs, estimating equations, norms, seeds."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

INF = math.inf


class RWPIError(Exception):
    """Base class for errors raised by this package."""


class InvalidExponentError(RWPIError, ValueError):
    pass


class DegenerateColumnError(RWPIError, ValueError):
    def __init__(self, column: int):
        super().__init__(f"column {column} has zero sample standard deviation")
        self.column = column


class KindMismatchError(RWPIError, ValueError):
    pass


class EmptyInputError(RWPIError, ValueError):
    pass


class DimensionError(RWPIError, ValueError):
    pass


class ConfigError(RWPIError, ValueError):
    pass


class DataFileError(RWPIError, ValueError):
    pass


def _check_exponent(q: float) -> float:
    q = float(q)
    if math.isnan(q) or q < 1:
        raise InvalidExponentError(f"norm exponent must be in [1, inf], got {q}")
    return q


def dual_exponent(q: float) -> float:
    """Return p with 1/p + 1/q = 1 (q=1 <-> p=inf)."""
    q = _check_exponent(q)
    if q == 1:
        return INF
    if math.isinf(q):
        return 1.0
    return q / (q - 1.0)


def lp_norm(v, p: float, axis: int | None = None):
    """l_p norm of ``v``; along ``axis`` if given."""
    p = _check_exponent(p)
    a = np.abs(np.asarray(v, dtype=float))
    if math.isinf(p):
        out = a.max(axis=axis, initial=0.0)
    elif p == 1:
        out = a.sum(axis=axis)
    elif p == 2:
        out = np.sqrt((a * a).sum(axis=axis))
    else:
        # scale first so large entries do not overflow under the power
        m = a.max(axis=axis, initial=0.0, keepdims=True)
        safe = np.where(m > 0, m, 1.0)
        out = np.squeeze(safe, axis=axis) * ((a / safe) ** p).sum(axis=axis) ** (1.0 / p)
    return float(out) if axis is None else out


@dataclass(frozen=True)
class CostSpec:
    """Transport cost ``||u - w||_q ** rho``.

    With ``modified=True`` the response coordinate (last entry of ``W``) may not
    move: transporting it costs infinity.
    """

    q: float = 2.0
    rho: float = 2.0
    modified: bool = False

    def __post_init__(self):
        _check_exponent(self.q)
        if not self.rho >= 1:
            raise InvalidExponentError(f"transport power must be >= 1, got {self.rho}")

    @property
    def p(self) -> float:
        return dual_exponent(self.q)

    def __call__(self, u, w) -> float:
        u = np.asarray(u, dtype=float)
        w = np.asarray(w, dtype=float)
        if self.modified:
            if u[-1] != w[-1]:
                return INF
            u, w = u[:-1], w[:-1]
        return float(lp_norm(u - w, self.q)) ** self.rho


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    kind: str = "regression"
    standardized: bool = False

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        y = np.array(self.y, dtype=float).reshape(-1)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DimensionError(f"X has shape {X.shape} but y has length {y.shape[0]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset entries must be finite")
        if self.kind not in ("regression", "binary"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "binary" and not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("binary responses must be -1 or +1")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "Dataset":
        return replace(self, X=self.X[rows], y=self.y[rows], standardized=False)

    def require(self, kind: str) -> "Dataset":
        if self.kind != kind:
            raise KindMismatchError(f"expected a {kind} dataset, got {self.kind}")
        return self


@dataclass(frozen=True)
class Standardizer:
    """Column statistics of a training set, reusable on held-out data."""

    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float = 0.0
    y_scale: float = 1.0

    @classmethod
    def fit(cls, ds: Dataset, response: bool = False) -> "Standardizer":
        if ds.n < 2:
            raise EmptyInputError("standardizing needs at least two rows")
        mean = ds.X.mean(axis=0)
        sd = ds.X.std(axis=0, ddof=1)
        for j, s in enumerate(sd):
            if not s > 1e-12 * max(1.0, abs(mean[j])):
                raise DegenerateColumnError(j)
        y_mean, y_scale = 0.0, 1.0
        if response and ds.kind == "regression":
            y_mean = float(ds.y.mean())
            y_scale = float(ds.y.std(ddof=1))
            if not y_scale > 0:
                raise DegenerateColumnError(ds.d)
        return cls(mean, sd, y_mean, y_scale)

    def transform(self, ds: Dataset) -> Dataset:
        X = (ds.X - self.x_mean) / self.x_scale
        y = ds.y if ds.kind == "binary" else (ds.y - self.y_mean) / self.y_scale
        return Dataset(X, y, ds.kind, standardized=True)


def standardize(ds: Dataset, response: bool = False) -> Dataset:
    """Center and scale each column of X (sd with divisor n-1).

    ``response=True`` also standardizes y for regression data; binary labels
    are never touched.
    """
    return Standardizer.fit(ds, response).transform(ds)


@dataclass(frozen=True)
class EstimatingEquation:
    """Moment function ``h(w, theta)`` with its derivative in ``w``.

    ``dims = (m, l, r)``: ``w`` has m entries, theta l, h returns r.
    ``Dh(w, theta)`` returns the r x m Jacobian.
    """

    h: Callable[[np.ndarray, np.ndarray], np.ndarray]
    Dh: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dims: tuple[int, int, int]

    def value(self, w, theta) -> np.ndarray:
        out = np.atleast_1d(np.asarray(self.h(np.asarray(w, float), np.asarray(theta, float)), float))
        if out.shape != (self.dims[2],):
            raise DimensionError(f"h returned shape {out.shape}, expected ({self.dims[2]},)")
        return out

    def jacobian(self, w, theta) -> np.ndarray:
        m, _, r = self.dims
        out = np.asarray(self.Dh(np.asarray(w, float), np.asarray(theta, float)), float).reshape(r, m)
        return out

    def check_derivative(self, w, theta, eps: float = 1e-6) -> float:
        """Largest relative gap between Dh and a central finite difference of h."""
        w = np.asarray(w, dtype=float)
        m = self.dims[0]
        fd = np.empty((self.dims[2], m))
        for k in range(m):
            e = np.zeros(m)
            e[k] = eps
            fd[:, k] = (self.value(w + e, theta) - self.value(w - e, theta)) / (2 * eps)
        J = self.jacobian(w, theta)
        return float(np.max(np.abs(J - fd)) / max(1.0, np.max(np.abs(fd))))


def mean_equation() -> EstimatingEquation:
    """h(w, theta) = w - theta in one dimension."""
    return EstimatingEquation(
        h=lambda w, t: np.atleast_1d(w[0] - t[0]),
        Dh=lambda w, t: np.ones((1, 1)),
        dims=(1, 1, 1),
    )


def linear_regression_equation(d: int) -> EstimatingEquation:
    """h(x, y; beta) = (y - beta'x) x with w = (x, y)."""

    def h(w, beta):
        x, y = w[:d], w[d]
        return (y - beta @ x) * x

    def Dh(w, beta):
        x, y = w[:d], w[d]
        J = np.empty((d, d + 1))
        J[:, :d] = (y - beta @ x) * np.eye(d) - np.outer(x, beta)
        J[:, d] = x
        return J

    return EstimatingEquation(h, Dh, (d + 1, d, d))


def logistic_equation(d: int) -> EstimatingEquation:
    """Gradient of the log-exponential loss, w = (x, y)."""

    def h(w, beta):
        x, y = w[:d], w[d]
        return -y * x / (1.0 + math.exp(y * (beta @ x)))

    def Dh(w, beta):
        x, y = w[:d], w[d]
        s = 1.0 / (1.0 + math.exp(y * (beta @ x)))
        J = np.empty((d, d + 1))
        J[:, :d] = -y * s * np.eye(d) + y * y * s * (1 - s) * np.outer(x, beta)
        J[:, d] = -s * x + y * (beta @ x) * s * (1 - s) * x
        return J

    return EstimatingEquation(h, Dh, (d + 1, d, d))


@dataclass(frozen=True)
class RngSeed:
    """Master seed with order-independent substreams.

    ``stream(i)`` mixes ``(master, *path, i)`` through numpy's SeedSequence
    hash, so any substream can be reproduced without drawing the others.
    """

    master: int
    path: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not 0 <= int(self.master) < 2**64:
            raise ValueError("master seed must be a 64-bit unsigned integer")

    def _sequence(self, index: int) -> np.random.SeedSequence:
        if index < 0:
            raise ValueError("substream index must be nonnegative")
        return np.random.SeedSequence(entropy=int(self.master), spawn_key=(*self.path, int(index)))

    def stream(self, index: int) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self._sequence(index)))

    def child(self, index: int) -> "RngSeed":
        """A seed whose substreams are disjoint from this seed's."""
        return RngSeed(self.master, (*self.path, int(index), 0xC0FFEE))


def as_seed(seed) -> RngSeed:
    if isinstance(seed, RngSeed):
        return seed
    return RngSeed(int(seed))


def read_csv(path, response: str, kind: str = "regression") -> Dataset:
    """Load a headered numeric CSV; ``response`` names the y column."""
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataFileError(f"{path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFileError(f"{path}: empty file") from None
        if response not in header:
            raise DataFileError(f"{path}: no column named {response!r} in header")
        yi = header.index(response)
        rows = []
        for record in reader:
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise DataFileError(
                    f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(record)}"
                )
            try:
                rows.append([float(c) for c in record])
            except ValueError:
                raise DataFileError(f"{path}:{reader.line_num}: non-numeric field") from None
    if not rows:
        raise DataFileError(f"{path}: no data rows")
    A = np.array(rows)
    X = np.delete(A, yi, axis=1)
    try:
        return Dataset(X, A[:, yi], kind)
    except ValueError as exc:
        raise DataFileError(f"{path}: {exc}") from exc


def write_csv(path, ds: Dataset, response: str = "y") -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j + 1}" for j in range(ds.d)] + [response])
        for xi, yi in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])
