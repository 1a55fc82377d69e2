"""Regularized estimators: square-root lasso, lp-penalized logistic regression, OLS."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .core import ConfigError, Dataset, DimensionError, RWPIError, as_seed, lp_norm

DEFAULT_TOL = 1e-8
MAX_PASSES = 100_000
MAX_PROX = 10_000
INTERPOLATION_MSE = 1e-14
CV_TIE_ABS = 1e-12
CV_TIE_REL = 1e-9


class InvalidPenaltyError(RWPIError, ValueError):
    pass


class RankError(RWPIError, ValueError):
    pass


@dataclass(frozen=True)
class FitResult:
    beta: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool
    lam: float
    model: str = ""
    p: float = 1.0
    history: tuple[float, ...] = field(default=(), repr=False)
    warnings: tuple[str, ...] = ()


def _check(lam: float, p: float) -> tuple[float, float]:
    lam = float(lam)
    if not lam >= 0 or math.isinf(lam):
        raise InvalidPenaltyError(f"penalty must be a finite nonnegative number, got {lam}")
    if p not in (1, 2):
        raise ConfigError(f"penalty norm must be 1 or 2, got {p}")
    return lam, float(p)


def _start(ds: Dataset, beta0) -> np.ndarray:
    if beta0 is None:
        return np.zeros(ds.d)
    beta = np.array(beta0, dtype=float).reshape(-1)
    if beta.shape != (ds.d,):
        raise DimensionError(f"starting point has {beta.size} entries, expected {ds.d}")
    return beta


# ---------------------------------------------------------------------------
# objectives and optimality residuals


def sqrt_lasso_objective(ds: Dataset, beta, lam: float, p: float = 1) -> float:
    r = ds.y - ds.X @ beta
    return math.sqrt(float(r @ r) / ds.n) + lam * lp_norm(beta, p)


def logistic_objective(ds: Dataset, beta, lam: float, p: float = 1) -> float:
    margins = ds.y * (ds.X @ beta)
    return float(np.mean(np.logaddexp(0.0, -margins))) + lam * lp_norm(beta, p)


def _subgradient_gap(g: np.ndarray, beta: np.ndarray, lam: float, p: float) -> float:
    """Distance of -g from lam * subdifferential of ||.||_p at beta."""
    if p == 1:
        on = beta != 0
        gap = np.where(on, np.abs(g + lam * np.sign(beta)), np.maximum(np.abs(g) - lam, 0.0))
        return float(gap.max(initial=0.0))
    nb = float(np.linalg.norm(beta))
    if nb == 0:
        return max(float(np.linalg.norm(g)) - lam, 0.0)
    return float(np.linalg.norm(g + lam * beta / nb))


def sqrt_lasso_kkt(ds: Dataset, beta, lam: float, p: float = 1) -> float:
    r = ds.y - ds.X @ beta
    rms = math.sqrt(float(r @ r) / ds.n)
    if rms <= math.sqrt(INTERPOLATION_MSE):
        return 0.0
    return _subgradient_gap(-(ds.X.T @ r) / (ds.n * rms), beta, lam, p)


def _logistic_grad(X, y, beta):
    # d/dbeta mean log(1 + exp(-y x'beta)) = -mean y x sigmoid(-y x'beta)
    s = 0.5 * (1.0 - np.tanh(0.5 * y * (X @ beta)))
    return -(X.T @ (y * s)) / X.shape[0]


def logistic_kkt(ds: Dataset, beta, lam: float, p: float = 1) -> float:
    return _subgradient_gap(_logistic_grad(ds.X, ds.y, beta), beta, lam, p)


# ---------------------------------------------------------------------------
# square-root lasso


def _soft(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def _lasso_cd(G, c, tau, beta, tol, max_passes):
    """Coordinate descent for 0.5 b'Gb - c'b + tau ||b||_1 (Gram form)."""
    diag = np.diag(G).copy()
    grad = G @ beta - c
    passes = 0
    for passes in range(1, max_passes + 1):
        biggest = 0.0
        for j in range(beta.size):
            if diag[j] == 0:
                continue
            old = beta[j]
            new = _soft(old - grad[j] / diag[j], tau / diag[j])
            if new != old:
                delta = new - old
                beta[j] = new
                grad += delta * G[:, j]
                biggest = max(biggest, abs(delta) * math.sqrt(diag[j]))
        if biggest <= tol:
            grad = G @ beta - c
            if _subgradient_gap(grad, beta, tau, 1) <= tol:
                break
    return beta, passes


def _group_prox_grad(G, c, tau, beta, tol, max_iter):
    """Accelerated proximal gradient for 0.5 b'Gb - c'b + tau ||b||_2."""
    L = float(np.linalg.eigvalsh(G)[-1]) if G.size else 0.0
    if L <= 0:
        return np.zeros_like(beta), 0
    step = 1.0 / L

    def prox(z):
        nz = float(np.linalg.norm(z))
        return z * max(0.0, 1.0 - step * tau / nz) if nz > 0 else z

    z, t = beta.copy(), 1.0
    it = 0
    for it in range(1, max_iter + 1):
        new = prox(z - step * (G @ z - c))
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        # restart momentum when it points uphill
        if (z - new) @ (new - beta) > 0:
            t_new, z = 1.0, new.copy()
        else:
            z = new + ((t - 1.0) / t_new) * (new - beta)
        beta, t = new, t_new
        if _subgradient_gap(G @ beta - c, beta, tau, 2) <= tol:
            break
    return beta, it


def fit_sqrt_lasso(ds: Dataset, lam: float, p: float = 1, tol: float = DEFAULT_TOL,
                   max_passes: int = MAX_PASSES, max_prox: int = MAX_PROX,
                   beta0=None) -> FitResult:
    """Minimize sqrt(MSE(beta)) + lam ||beta||_p by concomitant alternation.

    Each round sets sigma to the current root-MSE and then solves the lasso
    0.5 MSE(beta) + lam sigma ||beta||_p, warm-started at the previous beta.
    """
    ds.require("regression")
    lam, p = _check(lam, p)
    X, y, n = ds.X, ds.y, ds.n
    G = X.T @ X / n
    c = X.T @ y / n
    beta = _start(ds, beta0)
    cap = max_passes if p == 1 else max_prox
    history = [sqrt_lasso_objective(ds, beta, lam, p)]
    used = 0
    converged = False
    while used < cap:
        r = y - X @ beta
        m = float(r @ r) / n
        if m < INTERPOLATION_MSE:
            converged = True
            break
        sigma = math.sqrt(m)
        # the lasso gradient is sigma times the square-root-lasso gradient
        inner_tol = max(1e-2 * tol * sigma, 1e-15)
        solve = _lasso_cd if p == 1 else _group_prox_grad
        beta, it = solve(G, c, lam * sigma, beta.copy(), inner_tol, cap - used)
        used += it
        obj = sqrt_lasso_objective(ds, beta, lam, p)
        decrease = history[-1] - obj
        history.append(obj)
        if decrease < tol and sqrt_lasso_kkt(ds, beta, lam, p) < tol:
            converged = True
            break
    obj = sqrt_lasso_objective(ds, beta, lam, p)
    return FitResult(beta, obj, sqrt_lasso_kkt(ds, beta, lam, p), used, converged, lam,
                     "sqrt-lasso", p, tuple(history))


# ---------------------------------------------------------------------------
# penalized logistic regression


def _is_separable(X, y) -> bool:
    """True when some beta gives every y_i x_i'beta >= 1."""
    res = linprog(np.zeros(X.shape[1]), A_ub=-(y[:, None] * X), b_ub=-np.ones(len(y)),
                  bounds=[(None, None)] * X.shape[1], method="highs")
    return res.status == 0


def fit_logistic_lp(ds: Dataset, lam: float, p: float = 1, tol: float = DEFAULT_TOL,
                    max_iter: int = MAX_PROX, beta0=None) -> FitResult:
    """Minimize mean log(1 + exp(-y x'beta)) + lam ||beta||_p.

    Monotone FISTA with backtracking on the smooth part; the recorded
    objective sequence never increases.
    """
    ds.require("binary")
    lam, p = _check(lam, p)
    X, y = ds.X, ds.y

    def smooth(b):
        return float(np.mean(np.logaddexp(0.0, -y * (X @ b))))

    def prox(z, t):
        if p == 1:
            return _soft(z, t * lam)
        nz = float(np.linalg.norm(z))
        return z * max(0.0, 1.0 - t * lam / nz) if nz > 0 else z

    beta = _start(ds, beta0)
    obj = smooth(beta) + lam * lp_norm(beta, p)
    history = [obj]
    z, t_mom = beta.copy(), 1.0
    # the log-loss Hessian is bounded by X'X / (4n)
    L = max(float(np.linalg.norm(X, 2)) ** 2 / (4.0 * ds.n), 1e-12) if ds.n else 1.0
    L *= 0.1
    # without a penalty separable data has no minimizer; run to the cap
    separable = lam == 0 and _is_separable(X, y)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        fz, gz = smooth(z), _logistic_grad(X, y, z)
        while True:
            cand = prox(z - gz / L, 1.0 / L)
            diff = cand - z
            if smooth(cand) <= fz + gz @ diff + 0.5 * L * (diff @ diff) + 1e-15 * abs(fz):
                break
            L *= 2.0
        cand_obj = smooth(cand) + lam * lp_norm(cand, p)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_mom * t_mom))
        prev = beta
        if cand_obj <= obj:
            beta, obj = cand, cand_obj
        z = beta + (t_mom / t_new) * (cand - beta) + ((t_mom - 1.0) / t_new) * (beta - prev)
        t_mom = t_new
        L *= 0.9
        history.append(obj)
        if not separable and logistic_kkt(ds, beta, lam, p) <= tol:
            converged = True
            break
    warnings: tuple[str, ...] = ("separable",) if separable else ()
    return FitResult(beta, obj, logistic_kkt(ds, beta, lam, p), it, converged, lam,
                     "logistic", p, tuple(history), warnings)


# ---------------------------------------------------------------------------
# least squares


def fit_ols(ds: Dataset) -> FitResult:
    ds.require("regression")
    n, d = ds.X.shape
    if n < d:
        raise RankError(f"least squares needs n >= d, got n={n}, d={d}")
    Q, R = np.linalg.qr(ds.X)
    diag = np.abs(np.diag(R))
    if d and diag.min() <= max(n, d) * np.finfo(float).eps * diag.max():
        raise RankError("design matrix is rank deficient")
    beta = np.linalg.solve(R, Q.T @ ds.y) if d else np.zeros(0)
    r = ds.y - ds.X @ beta
    kkt = float(np.max(np.abs(ds.X.T @ r), initial=0.0)) / n
    mse = float(r @ r) / n
    return FitResult(beta, mse, kkt, 1, True, 0.0, "ols", 2.0, (mse,))


# ---------------------------------------------------------------------------
# cross-validation baseline


def lambda_max(ds: Dataset, objective: str = "sqrt-lasso") -> float:
    """Smallest l1 penalty whose solution is beta = 0."""
    if objective == "sqrt-lasso":
        ny = float(np.linalg.norm(ds.y))
        return float(np.max(np.abs(ds.X.T @ ds.y))) / (math.sqrt(ds.n) * ny) if ny else 0.0
    if objective == "logistic":
        return float(np.max(np.abs(ds.X.T @ ds.y))) / (2.0 * ds.n)
    raise ConfigError(f"unknown objective {objective!r}")


def default_grid(ds: Dataset, objective: str = "sqrt-lasso", size: int = 50,
                 ratio: float = 1e-3) -> np.ndarray:
    """Log-spaced grid from lambda_max down to ratio * lambda_max."""
    top = lambda_max(ds, objective)
    if top <= 0:
        top = 1.0
    return np.geomspace(top, top * ratio, size)


def _fold_loss(objective, train, test, lam, p, beta0):
    if objective == "sqrt-lasso":
        fit = fit_sqrt_lasso(train, lam, p, beta0=beta0)
        r = test.y - test.X @ fit.beta
        return float(r @ r) / test.n, fit.beta
    fit = fit_logistic_lp(train, lam, p, beta0=beta0)
    return float(np.mean(np.logaddexp(0.0, -test.y * (test.X @ fit.beta)))), fit.beta


def cross_validate_lambda(ds: Dataset, folds: int = 10, grid=None,
                          objective: str = "sqrt-lasso", seed=0, p: float = 1) -> float:
    """Grid penalty with the smallest mean out-of-fold loss (first on ties)."""
    if objective not in ("sqrt-lasso", "logistic"):
        raise ConfigError(f"unknown objective {objective!r}")
    ds.require("regression" if objective == "sqrt-lasso" else "binary")
    grid = default_grid(ds, objective) if grid is None else np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise ConfigError("penalty grid is empty")
    if folds < 2:
        raise ConfigError("need at least two folds")
    if folds > ds.n:
        raise ConfigError(f"{folds} folds leave some fold empty with n={ds.n}")
    perm = as_seed(seed).stream(0).permutation(ds.n)
    assignment = np.empty(ds.n, dtype=int)
    assignment[perm] = np.arange(ds.n) % folds
    # unique values, fitted from the largest penalty down for warm starts
    uniq = np.unique(grid)[::-1]
    total = dict.fromkeys(uniq.tolist(), 0.0)
    for k in range(folds):
        train = ds.subset(assignment != k)
        test = ds.subset(assignment == k)
        if train.n == 0:
            raise ConfigError(f"fold {k} has an empty training set")
        beta = None
        for lam in uniq:
            loss, beta = _fold_loss(objective, train, test, float(lam), p, beta)
            total[float(lam)] += loss / folds
    losses = np.array([total[float(lam)] for lam in grid])
    # losses equal up to solver accuracy count as ties, resolved by grid order
    best = float(losses.min())
    tied = losses <= best + CV_TIE_ABS + CV_TIE_REL * abs(best)
    return float(grid[int(np.argmax(tied))])


__all__ = [
    "FitResult", "InvalidPenaltyError", "RankError", "fit_sqrt_lasso", "fit_logistic_lp",
    "fit_ols", "cross_validate_lambda", "sqrt_lasso_objective", "logistic_objective",
    "sqrt_lasso_kkt", "logistic_kkt", "lambda_max", "default_grid",
]
