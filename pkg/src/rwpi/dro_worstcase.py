"""Worst-case expected loss over a Wasserstein ball around the empirical measure."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .core import ConfigError, Dataset, DimensionError, RWPIError, lp_norm

FORMS = ("closed-linear", "closed-linear-barbeta", "closed-logistic", "closed-hinge", "dual-numeric")


class NumericBracketError(RWPIError, ArithmeticError):
    pass


@dataclass(frozen=True)
class WorstCase:
    value: float
    gamma: float | None
    form: str


def _beta(ds: Dataset, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.shape != (ds.d,):
        raise DimensionError(f"beta has {beta.size} entries, dataset has {ds.d} columns")
    return beta


def _radius(delta: float) -> float:
    delta = float(delta)
    if not delta >= 0:
        raise ConfigError(f"radius must be nonnegative, got {delta}")
    return delta


def mse(ds: Dataset, beta) -> float:
    r = ds.y - ds.X @ _beta(ds, beta)
    return float(r @ r) / ds.n


def logistic_loss(ds: Dataset, beta) -> float:
    margins = ds.y * (ds.X @ _beta(ds, beta))
    return float(np.mean(np.logaddexp(0.0, -margins)))


def hinge_loss(ds: Dataset, beta) -> float:
    margins = ds.y * (ds.X @ _beta(ds, beta))
    return float(np.mean(np.maximum(0.0, 1.0 - margins)))


def _transport_norm(beta: np.ndarray, p: float, use_barbeta: bool) -> float:
    v = np.append(-beta, 1.0) if use_barbeta else beta
    return lp_norm(v, p)


def worstcase_linear_closed(ds: Dataset, beta, delta: float, p: float,
                            use_barbeta: bool = False) -> WorstCase:
    """(sqrt(MSE) + sqrt(delta) ||v||_p)^2, v = beta or (-beta, 1).

    ``use_barbeta=False`` is the cost that keeps the response fixed;
    ``True`` lets the response move as well.
    """
    ds.require("regression")
    beta = _beta(ds, beta)
    delta = _radius(delta)
    v = _transport_norm(beta, p, use_barbeta)
    value = (math.sqrt(mse(ds, beta)) + math.sqrt(delta) * v) ** 2
    return WorstCase(value, None, "closed-linear-barbeta" if use_barbeta else "closed-linear")


def worstcase_logistic_closed(ds: Dataset, beta, delta: float, p: float) -> WorstCase:
    ds.require("binary")
    beta = _beta(ds, beta)
    delta = _radius(delta)
    return WorstCase(logistic_loss(ds, beta) + delta * lp_norm(beta, p), None, "closed-logistic")


def worstcase_hinge_closed(ds: Dataset, beta, delta: float, p: float) -> WorstCase:
    ds.require("binary")
    beta = _beta(ds, beta)
    delta = _radius(delta)
    return WorstCase(hinge_loss(ds, beta) + delta * lp_norm(beta, p), None, "closed-hinge")


def dual_objective(gamma: float, delta: float, mse_value: float, a: float) -> float:
    """g(gamma) = gamma delta + gamma / (gamma - a) * MSE for gamma > a."""
    if gamma <= a:
        return math.inf
    return gamma * delta + gamma / (gamma - a) * mse_value


def worstcase_dual_numeric(ds: Dataset, beta, delta: float, p: float,
                           use_barbeta: bool = False, rtol: float = 1e-10,
                           max_expand: int = 60) -> WorstCase:
    """Square-loss worst case from the one-dimensional dual in gamma.

    Numerical counterpart of :func:`worstcase_linear_closed`; it never uses
    the closed form or the analytic minimizer.
    """
    ds.require("regression")
    beta = _beta(ds, beta)
    delta = _radius(delta)
    m = mse(ds, beta)
    if delta == 0:
        return WorstCase(m, None, "dual-numeric")
    a = _transport_norm(beta, p, use_barbeta) ** 2
    if a == 0:
        # g is increasing on (0, inf) with infimum MSE at gamma -> 0
        return WorstCase(m, 0.0, "dual-numeric")
    lo = a * (1.0 + 1e-9)
    hi = a * (1.0 + math.sqrt(m / delta)) * 10.0
    for _ in range(max_expand):
        res = minimize_scalar(dual_objective, bounds=(lo, hi), args=(delta, m, a),
                              method="bounded", options={"xatol": rtol * lo})
        if not res.success or not math.isfinite(res.fun):
            break
        if res.x < hi - 1e-6 * (hi - lo):
            gamma = float(res.x)
            # the bounded search never evaluates the endpoint itself
            if dual_objective(lo, delta, m, a) < res.fun:
                gamma = lo
            return WorstCase(dual_objective(gamma, delta, m, a), gamma, "dual-numeric")
        lo, hi = 0.5 * (lo + hi), hi * 10.0
    raise NumericBracketError(f"could not bracket the dual minimizer (delta={delta}, a={a})")


__all__ = [
    "WorstCase", "NumericBracketError", "FORMS", "mse", "logistic_loss", "hinge_loss",
    "worstcase_linear_closed", "worstcase_logistic_closed", "worstcase_hinge_closed",
    "worstcase_dual_numeric", "dual_objective",
]
