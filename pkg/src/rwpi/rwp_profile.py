"""Robust Wasserstein profile function R_n(theta).

Three evaluators are provided: the closed form for the mean, an exact dual
ascent for linear regression under the squared Euclidean cost that only moves
predictors, and a best-effort dual ascent for arbitrary estimating equations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .core import (
    CostSpec,
    Dataset,
    DimensionError,
    EmptyInputError,
    EstimatingEquation,
    RngSeed,
    as_seed,
    lp_norm,
)

FEASIBILITY_MARGIN = 1e-9
ARMIJO = 1e-4


@dataclass(frozen=True)
class RwpValue:
    value: float
    dual_point: np.ndarray
    iterations: int
    converged: bool
    method_tag: str
    residual: float = 0.0


def rwp_mean(samples, theta: float, rho: float = 2.0) -> RwpValue:
    """Profile value for h(w, theta) = w - theta: ``|mean(W) - theta| ** rho``."""
    w = np.asarray(samples, dtype=float).reshape(-1)
    if w.size == 0:
        raise EmptyInputError("rwp_mean needs at least one sample")
    if not rho >= 1:
        raise ValueError("rho must be >= 1")
    gap = float(np.mean(w) - theta)
    value = abs(gap) ** rho
    # maximizer of -lambda*gap - (rho-1)|lambda/rho|^(rho/(rho-1)); |lambda|<=1 box when rho=1
    if rho == 1:
        lam = -math.copysign(1.0, gap) if gap != 0 else 0.0
    else:
        lam = -rho * math.copysign(abs(gap) ** (rho - 1), gap)
    return RwpValue(value, np.array([lam]), 0, True, "mean-closed-form")


# ---------------------------------------------------------------------------
# linear regression, cost ||x' - x||_2^2 with y held fixed


def _min_eig(beta: np.ndarray, lam: np.ndarray) -> float:
    """Smallest eigenvalue of I + (beta lam' + lam beta')/2."""
    return 1.0 + 0.5 * (beta @ lam - np.linalg.norm(beta) * np.linalg.norm(lam))


def _linear_q2_dual(X, y, beta, lam):
    """Dual objective and gradient at lam; (-inf, None) when infeasible."""
    if _min_eig(beta, lam) <= FEASIBILITY_MARGIN:
        return -math.inf, None
    d = X.shape[1]
    M = np.eye(d) + 0.5 * (np.outer(beta, lam) + np.outer(lam, beta))
    B = y[:, None] * lam[None, :] + 2.0 * X  # rows b_i
    Xs = 0.5 * np.linalg.solve(M, B.T).T  # maximizers x'_i = M^{-1} b_i / 2
    inner = 0.5 * np.einsum("ij,ij->i", B, Xs) - np.einsum("ij,ij->i", X, X)
    h = (y - Xs @ beta)[:, None] * Xs
    return -float(inner.mean()), -h.mean(axis=0)


def _ascend(f, x0, tol, max_iter, step0=1.0):
    """Gradient ascent with Barzilai-Borwein trial steps and Armijo backtracking.

    ``f`` returns (value, gradient); value -inf marks an infeasible point and
    is rejected by the line search.
    """
    x = np.asarray(x0, dtype=float)
    fx, g = f(x)
    if not math.isfinite(fx):
        raise ValueError("starting point is infeasible")
    step = step0
    x_prev = g_prev = None
    it = 0
    while it < max_iter:
        gn = float(np.linalg.norm(g))
        if gn <= tol:
            return x, fx, g, it, True
        if x_prev is not None:
            s, yk = x - x_prev, g - g_prev
            sy = float(s @ yk)
            if sy < 0:
                step = float(s @ s) / -sy
        t = step
        while True:
            xn = x + t * g
            fn, gnew = f(xn)
            if math.isfinite(fn) and fn >= fx + ARMIJO * t * gn * gn:
                break
            t *= 0.5
            if t < 1e-20:
                return x, fx, g, it, False
        x_prev, g_prev = x, g
        x, fx, g = xn, fn, gnew
        step = t
        it += 1
    return x, fx, g, it, float(np.linalg.norm(g)) <= tol


def rwp_linear_q2(ds: Dataset, beta, tol: float = 1e-8, max_iter: int = 10_000) -> RwpValue:
    """Exact profile value for h = (y - beta'x) x, predictors moved at cost ||.||_2^2."""
    ds.require("regression")
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.shape != (ds.d,):
        raise DimensionError(f"beta has {beta.size} entries, dataset has {ds.d} columns")
    X, y = ds.X, ds.y
    lam, val, g, it, ok = _ascend(lambda l: _linear_q2_dual(X, y, beta, l), np.zeros(ds.d), tol, max_iter)
    return RwpValue(val if val > 0 else 0.0, lam, it, ok, "linear-q2-dual", float(np.linalg.norm(g)))


# ---------------------------------------------------------------------------
# generic estimating equations


@dataclass(frozen=True)
class GenericDualConfig:
    starts: int = 8
    perturbation: float = 1.0
    ceiling: float = 1e12
    max_outer: int = 2_000
    max_inner: int = 500


def _inner_sup(eq, theta, cost: CostSpec, w, lam, rng, cfg: GenericDualConfig):
    """sup_u { lam' h(u) - c(u, w) } by multi-start local ascent.

    Returns (value, maximizer); value is +inf when the objective escapes the
    configured ceiling.
    """
    free = slice(0, w.size - 1) if cost.modified else slice(0, w.size)
    fixed = w[free.stop:]
    q, rho = cost.q, cost.rho

    def full(z):
        return np.concatenate([z, fixed]) if cost.modified else z

    def neg(z):
        u = full(z)
        diff = z - w[free]
        val = lam @ eq.value(u, theta) - float(lp_norm(diff, q)) ** rho
        J = eq.jacobian(u, theta)[:, free]
        g = lam @ J - _cost_grad(diff, q, rho)
        return -val, -g

    starts = [w[free]] + [w[free] + cfg.perturbation * rng.standard_normal(free.stop - free.start)
                          for _ in range(cfg.starts - 1)]
    best_val, best_u = -math.inf, w
    for z0 in starts:
        with np.errstate(all="ignore"):
            res = minimize(neg, z0, jac=True, method="L-BFGS-B",
                           options={"maxiter": cfg.max_inner, "gtol": 1e-12, "ftol": 1e-15})
        v = -float(res.fun)
        if not math.isfinite(v) or v > cfg.ceiling or np.max(np.abs(res.x)) > cfg.ceiling:
            return math.inf, None
        if v > best_val:
            best_val, best_u = v, full(res.x)
    return best_val, best_u


def _cost_grad(diff, q, rho):
    """Gradient of ||diff||_q^rho (a subgradient where it is not smooth)."""
    r = float(lp_norm(diff, q))
    if r == 0:
        return np.zeros_like(diff)
    if math.isinf(q):
        g = np.zeros_like(diff)
        k = int(np.argmax(np.abs(diff)))
        g[k] = math.copysign(1.0, diff[k])
    elif q == 1:
        g = np.sign(diff)
    else:
        g = np.sign(diff) * (np.abs(diff) / r) ** (q - 1)
    return rho * r ** (rho - 1) * g


def rwp_generic_dual(
    samples,
    eq: EstimatingEquation,
    theta,
    cost: CostSpec,
    tol: float = 1e-8,
    cfg: GenericDualConfig = GenericDualConfig(),
    seed: RngSeed | int = 0,
) -> RwpValue:
    """Best-effort profile value via the dual over lambda.

    Every returned value is a feasible dual objective, hence a lower bound on
    R_n(theta); the upper side is only as good as the local inner searches.
    Sample ``i`` draws its restart perturbations from substream ``i``.
    """
    m, l, r = eq.dims
    W = np.asarray(samples, dtype=float)
    if W.ndim == 1:
        W = W.reshape(-1, 1) if m == 1 else W.reshape(1, -1)
    if W.shape[1] != m:
        raise DimensionError(f"samples have {W.shape[1]} columns, equation expects m={m}")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape != (l,):
        raise DimensionError(f"theta has {theta.size} entries, equation expects l={l}")
    seed = as_seed(seed)
    n = W.shape[0]

    def dual(lam):
        vals = np.empty(n)
        grad = np.zeros(r)
        for i in range(n):
            v, u = _inner_sup(eq, theta, cost, W[i], lam, seed.stream(i), cfg)
            if not math.isfinite(v):
                return -math.inf, None
            vals[i] = v
            grad += eq.value(u, theta)
        return -float(vals.mean()), -grad / n

    lam, val, g, it, ok = _ascend(dual, np.zeros(r), tol, cfg.max_outer)
    # a rejected probe only tells us that lambda was dual infeasible; the
    # returned point itself was always evaluated as bounded
    converged = ok and math.isfinite(val)
    return RwpValue(val if val > 0 else 0.0, lam, it, converged, "generic-dual", float(np.linalg.norm(g)))
