"""Samplers for the limit laws of the scaled profile function, and quantiles.

Gaussian draws are generated in fixed blocks of ``BLOCK`` draws; block ``b``
uses substream ``b`` of the batch seed, so a batch is reproducible and does
not depend on how blocks are scheduled.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog
from scipy.stats import norm

from .core import (
    ConfigError,
    DimensionError,
    EmptyInputError,
    RngSeed,
    RWPIError,
    as_seed,
    lp_norm,
)

BLOCK = 1024
EIG_FLOOR = 1e-12
DEFAULT_SAA = 1000
ASCENT_TOL = 1e-8
NORMAL_ERROR_FACTOR = math.pi / (math.pi - 2.0)

# substream indices reserved for things other than Gaussian blocks
_SAA_STREAM = 2**40
_BOOT_STREAM = 2**40 + 1


class UnboundedLawError(RWPIError, ValueError):
    """The maximization defining a draw has no finite optimum."""


@dataclass(frozen=True)
class LimitSampleBatch:
    law: str
    values: np.ndarray
    seed: RngSeed
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class QuantileEstimate:
    level: float
    value: float
    sample_size: int
    standard_error: float


def covariance_factor(C) -> np.ndarray:
    """Return F with F F' = C for a symmetric PSD matrix.

    Eigenvalues below ``EIG_FLOOR`` (relative to the largest) are set to zero,
    so singular or slightly indefinite plug-in estimates are accepted.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape[0] != C.shape[1]:
        raise DimensionError(f"covariance must be square, got {C.shape}")
    w, V = np.linalg.eigh(0.5 * (C + C.T))
    cut = EIG_FLOOR * max(1.0, float(np.max(np.abs(w), initial=0.0)))
    w = np.where(w > cut, w, 0.0)
    return V * np.sqrt(w)


def second_moment(A) -> np.ndarray:
    """Plug-in E[a a'] from the rows of A."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return A.T @ A / A.shape[0]


def gaussian_draws(factor, n_draws: int, seed) -> np.ndarray:
    """``n_draws`` rows of N(0, F F')."""
    F = np.atleast_2d(np.asarray(factor, dtype=float))
    seed = as_seed(seed)
    out = np.empty((n_draws, F.shape[0]))
    for b, start in enumerate(range(0, n_draws, BLOCK)):
        stop = min(start + BLOCK, n_draws)
        out[start:stop] = seed.stream(b).standard_normal((stop - start, F.shape[1])) @ F.T
    return out


# ---------------------------------------------------------------------------
# concave maximizations  max_x  lin * a'x - pen * mean_i ||D_i' x||_p^s


def _check_directions(D: np.ndarray) -> None:
    """Raise if some x != 0 has D_i' x = 0 for every i."""
    n, r, m = D.shape
    stacked = D.transpose(1, 0, 2).reshape(r, n * m)
    if stacked.size == 0 or np.linalg.matrix_rank(stacked) < r:
        raise UnboundedLawError(
            "penalty vanishes along some direction; the limit law is unbounded"
        )


def _norm_grad(V, Nv, p):
    """Gradient of ||v||_p for the rows along the last axis (0 where v = 0)."""
    with np.errstate(invalid="ignore", divide="ignore"):
        if math.isinf(p):
            G = np.zeros_like(V)
            k = np.argmax(np.abs(V), axis=-1)[..., None]
            np.put_along_axis(G, k, np.sign(np.take_along_axis(V, k, axis=-1)), axis=-1)
        elif p == 1:
            G = np.sign(V)
        else:
            G = np.sign(V) * (np.abs(V) / Nv[..., None]) ** (p - 1)
    return np.where(Nv[..., None] > 0, G, 0.0)


def _penalty(Xb, D, p, s):
    V = np.einsum("br,nrm->bnm", Xb, D)
    Nv = lp_norm(V, p, axis=2)
    P = (Nv**s).mean(axis=1)
    G = _norm_grad(V, Nv, p) * (s * Nv ** (s - 1))[..., None]
    grad = np.einsum("bnm,nrm->br", G, D) / D.shape[0]
    return P, grad


def _batched_ascent(A, D, p, s, lin, pen, tol=ASCENT_TOL, max_iter=5000):
    """Maximize lin*a'x - pen*P(x) for every row a of A.

    Gradient ascent with per-row Barzilai-Borwein steps and Armijo
    backtracking. Returns (values, residuals).
    """
    B, r = A.shape
    x = np.zeros((B, r))
    f = np.zeros(B)
    g = lin * A.copy()
    step = np.ones(B)
    done = np.linalg.norm(g, axis=1) <= tol
    for _ in range(max_iter):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        ga = g[act]
        gn2 = np.einsum("ij,ij->i", ga, ga)
        xt = x[act] + step[act, None] * ga
        P, dP = _penalty(xt, D, p, s)
        ft = lin * np.einsum("ij,ij->i", A[act], xt) - pen * P
        gt = lin * A[act] - pen * dP
        ok = ft >= f[act] + 1e-4 * step[act] * gn2
        if np.any(np.abs(xt[ok]) > 1e12):
            raise UnboundedLawError("ascent diverged; the limit law is unbounded")
        acc = act[ok]
        sk = xt[ok] - x[acc]
        yk = gt[ok] - g[acc]
        sy = np.einsum("ij,ij->i", sk, yk)
        ss = np.einsum("ij,ij->i", sk, sk)
        x[acc], f[acc], g[acc] = xt[ok], ft[ok], gt[ok]
        step[acc] = np.where(sy < 0, ss / np.where(sy < 0, -sy, 1.0), 2.0 * step[acc])
        rej = act[~ok]
        step[rej] *= 0.5
        done[acc] = np.linalg.norm(g[acc], axis=1) <= tol
        # nonsmooth penalties can stall at a kink: stop once steps underflow
        done[rej] |= step[rej] * (1.0 + np.linalg.norm(x[rej], axis=1)) < 1e-18
    return f, np.linalg.norm(g, axis=1)


def _objective(X, A, D, p, s, lin, pen):
    P, dP = _penalty(X, D, p, s)
    return lin * np.einsum("ij,ij->i", A, X) - pen * P, lin * A - pen * dP


def _smooth_norm(V, p, eps):
    """Smooth upper approximation of ||v||_p for p in {1, inf}.

    p = 1 uses sum sqrt(v^2 + eps^2); p = inf a log-sum-exp over +-v with
    temperature eps. The Hessian is diag(hd) + c * g g' and is returned as
    (value, g, hd, c).
    """
    if p == 1:
        root = np.sqrt(V * V + eps * eps)
        return root.sum(axis=-1), V / root, eps * eps / root**3, 0.0
    M = np.abs(V).max(axis=-1, keepdims=True)
    ep = np.exp((V - M) / eps)
    em = np.exp((-V - M) / eps)
    Zs = (ep + em).sum(axis=-1, keepdims=True)
    val = (M + eps * np.log(Zs))[..., 0]
    wp, wm = ep / Zs, em / Zs
    return val, wp - wm, (wp + wm) / eps, -1.0 / eps


def _smoothed_newton(A, D, p, lin, pen, levels=6, inner=40):
    """Maximize lin a'x - pen * E||D'x||_p^2 for p in {1, inf}.

    The norm is replaced by a smooth majorant whose accuracy parameter is
    shrunk geometrically; each level runs damped Newton from the previous
    solution. The smoothed objective never exceeds the true one, so the true
    value at the final point is a lower bound on the optimum and at least the
    smoothed optimum.
    """
    B, r = A.shape
    n, _, m = D.shape
    flat = D.transpose(1, 0, 2).reshape(r, n * m)  # V = x @ flat
    S2 = flat @ flat.T / n
    x = (lin / (2.0 * pen)) * np.linalg.solve(S2, A.T).T
    P, _ = _penalty(x, D, p, 2.0)
    a = np.einsum("ij,ij->i", A, x)
    x *= (lin * a / (2.0 * pen * np.where(P > 0, P, 1.0)))[:, None]
    scale = float(np.mean(np.abs(x[: min(B, 16)] @ flat))) or 1.0

    def smoothed(X, Ab, eps, want_hess):
        V = (X @ flat).reshape(-1, n, m)
        phi, g, hd, c = _smooth_norm(V, p, eps)
        val = lin * np.einsum("ij,ij->i", Ab, X) - pen * (phi * phi).mean(axis=1)
        if not want_hess:
            return val, None, None
        grad = lin * Ab - (2.0 * pen / n) * ((phi[..., None] * g).reshape(len(X), -1) @ flat.T)
        # curvature of phi^2 = 2 (1 + c phi) g g' + 2 phi diag(hd)
        W = np.matmul(D[None], g[..., None])[..., 0] * np.sqrt(np.abs(1.0 + c * phi))[..., None]
        sgn = np.sign(1.0 + c * phi)
        low = np.matmul((W * sgn[..., None]).transpose(0, 2, 1), W)
        diag = np.matmul(flat[None] * (phi[..., None] * hd).reshape(len(X), 1, -1), flat.T)
        return val, grad, -(2.0 * pen / n) * (low + diag)

    eye = np.eye(r)
    for level in range(levels):
        rel = 10.0 ** (-1.0 - 1.5 * level)
        eps = scale * rel
        # coarse levels only need to hand a good start to the next one
        tol = max(1e-13, 1e-3 * rel)
        active = np.ones(B, dtype=bool)
        for _ in range(inner):
            act = np.flatnonzero(active)
            if act.size == 0:
                break
            xa, Aa = x[act], A[act]
            f, g, H = smoothed(xa, Aa, eps, True)
            tr = np.abs(np.trace(H, axis1=1, axis2=2))[:, None, None] / r
            step = np.linalg.solve(-H + 1e-14 * tr * eye, g[..., None])[..., 0]
            dec = np.einsum("ij,ij->i", g, step)  # Newton decrement squared
            t = np.ones(act.size)
            pending = np.arange(act.size)
            for _ in range(60):
                xt = xa[pending] + t[pending, None] * step[pending]
                ft, _, _ = smoothed(xt, Aa[pending], eps, False)
                ok = ft >= f[pending] + 0.25 * t[pending] * dec[pending]
                x[act[pending[ok]]] = xt[ok]
                pending = pending[~ok]
                if pending.size == 0:
                    break
                t[pending] *= 0.5
            done = dec <= tol * (1.0 + np.abs(f))
            done[pending] = True
            active[act[done]] = False
    f, grad = _objective(x, A, D, p, 2.0, lin, pen)
    return f, np.linalg.norm(grad, axis=1)


def _maximize(A, D, p, s, lin, pen):
    """Row-wise optimal values and the largest final gradient norm.

    The gradient norm need not vanish for p in {1, inf}, where the optimum
    may sit on a kink of the penalty.
    """
    if A.shape[0] == 0:
        return np.zeros(0), 0.0
    if p == 2 and s == 2:
        S = np.einsum("nrm,nkm->rk", D, D) / D.shape[0]
        sol = np.linalg.solve(S, A.T).T
        return lin * lin * np.einsum("ij,ij->i", A, sol) / (4.0 * pen), 0.0
    piecewise = s == 2 and (p == 1 or math.isinf(p))
    vals, res = [], []
    chunk = max(1, int(2e6 // max(1, D.shape[0] * max(D.shape[1], D.shape[2]))))
    for start in range(0, A.shape[0], chunk):
        blk = A[start:start + chunk]
        if piecewise:
            v, r = _smoothed_newton(blk, D, p, lin, pen)
        else:
            v, r = _batched_ascent(blk, D, p, s, lin, pen)
        vals.append(v)
        res.append(r)
    return np.concatenate(vals), float(np.max(np.concatenate(res)))


def _saa_rows(n_avail: int, size: int | None, seed: RngSeed) -> np.ndarray:
    if size is None or size >= n_avail:
        return np.arange(n_avail)
    return np.sort(seed.stream(_SAA_STREAM).choice(n_avail, size=size, replace=False))


def _as_jacobians(dh_samples, r: int) -> np.ndarray:
    D = np.asarray(dh_samples, dtype=float)
    if D.ndim == 1:
        D = D.reshape(-1, 1, 1)
    elif D.ndim == 2:
        D = D.reshape(D.shape[0], r, -1)
    if D.ndim != 3 or D.shape[1] != r:
        raise DimensionError(f"derivative samples must be n x {r} x m, got {np.shape(dh_samples)}")
    return D


def _as_rows(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a.reshape(-1, 1) if a.ndim == 1 else a


# ---------------------------------------------------------------------------
# public samplers


def rbar_draw(H, dh_samples, p: float, rho: float) -> np.ndarray:
    """max_z { rho z'H - (rho-1) mean_i ||z' D_i||_p^(rho/(rho-1)) } for each row of H."""
    H = _as_rows(H)
    D = _as_jacobians(dh_samples, H.shape[1])
    _check_directions(D)
    vals, _ = _maximize(H, D, p, rho / (rho - 1.0), rho, rho - 1.0)
    return vals


def sample_rbar(
    rho: float,
    h_samples,
    dh_samples,
    p: float,
    n_draws: int,
    seed,
    saa_size: int | None = DEFAULT_SAA,
) -> LimitSampleBatch:
    """Draws of the limit of n^(rho/2) R_n(theta*) for rho > 1."""
    if not rho > 1:
        raise ConfigError("rho must exceed 1 here; use sample_rbar_one for rho = 1")
    seed = as_seed(seed)
    Hs = _as_rows(h_samples)
    D = _as_jacobians(dh_samples, Hs.shape[1])
    D = D[_saa_rows(D.shape[0], saa_size, seed)]
    _check_directions(D)
    H = gaussian_draws(covariance_factor(second_moment(Hs)), n_draws, seed)
    vals, res = _maximize(H, D, p, rho / (rho - 1.0), rho, rho - 1.0)
    meta = {"rho": rho, "p": p, "saa_size": int(D.shape[0]), "max_gradient_norm": res}
    return LimitSampleBatch("RBAR_RHO", np.maximum(vals, 0.0), seed, meta)


def rbar_one_draw(H, dh_samples, p: float, tol: float = 1e-8, max_rounds: int = 200) -> np.ndarray:
    """max z'H subject to ||z' D_i||_p <= 1 for every i, per row of H."""
    H = _as_rows(H)
    D = _as_jacobians(dh_samples, H.shape[1])
    _check_directions(D)
    r = H.shape[1]
    if r == 1:
        return np.abs(H[:, 0]) / float(np.max(lp_norm(D[:, 0, :], p, axis=1)))
    base = D.transpose(0, 2, 1).reshape(-1, r)  # rows: columns of each D_i
    base = np.vstack([base, -base])
    return np.array([_cutting_plane(h, D, base, p, tol, max_rounds) for h in H])


def _cutting_plane(h, D, cuts, p, tol, max_rounds):
    """Kelley cutting planes; every valid cut has the form g'z <= 1."""
    r = h.size
    upper = lower = 0.0
    for _ in range(max_rounds):
        res = linprog(-h, A_ub=cuts, b_ub=np.ones(cuts.shape[0]),
                      bounds=[(-1e12, 1e12)] * r, method="highs")
        if res.status != 0:
            raise UnboundedLawError(f"cutting-plane LP failed: {res.message}")
        z = res.x
        V = np.einsum("r,nrm->nm", z, D)
        Nv = lp_norm(V, p, axis=1)
        worst = float(Nv.max())
        upper = -res.fun
        lower = upper / max(worst, 1.0)
        if worst - 1.0 <= tol:
            return upper
        viol = np.flatnonzero(Nv > 1.0 + tol)
        viol = viol[np.argsort(-Nv[viol])][:64]
        G = _norm_grad(V[viol], Nv[viol], p)
        cuts = np.vstack([cuts, np.einsum("nm,nrm->nr", G, D[viol])])
        if abs(upper - lower) <= tol * max(1.0, abs(upper)):
            return lower
    return lower


def sample_rbar_one(h_samples, dh_samples, p: float, n_draws: int, seed,
                    saa_size: int | None = DEFAULT_SAA) -> LimitSampleBatch:
    """Draws of the limit of n^(1/2) R_n(theta*) for rho = 1."""
    seed = as_seed(seed)
    Hs = _as_rows(h_samples)
    D = _as_jacobians(dh_samples, Hs.shape[1])
    D = D[_saa_rows(D.shape[0], saa_size, seed)]
    _check_directions(D)
    H = gaussian_draws(covariance_factor(second_moment(Hs)), n_draws, seed)
    vals = rbar_one_draw(H, D, p) if n_draws else np.zeros(0)
    return LimitSampleBatch("RBAR_1", vals, seed, {"rho": 1.0, "p": p, "saa_size": int(D.shape[0])})


def l1_matrices(beta_star, x_sample, e_sample) -> np.ndarray:
    """Stack of A_i' where A_i xi = e_i xi - (xi'X_i) beta*."""
    beta = np.asarray(beta_star, dtype=float).reshape(-1)
    X = _as_rows(x_sample)
    e = np.asarray(e_sample, dtype=float).reshape(-1)
    if X.shape[1] != beta.size:
        raise DimensionError("predictor sample and beta* disagree in dimension")
    d = beta.size
    A = e[:, None, None] * np.eye(d)[None] - beta[None, :, None] * X[:, None, :]
    return A.transpose(0, 2, 1)


def l1_draw(Z, sigma: float, beta_star, x_sample, e_sample, p: float) -> np.ndarray:
    """max_xi { 2 sigma xi'Z - mean_i ||e_i xi - (xi'X_i) beta*||_p^2 } per row of Z."""
    Z = _as_rows(Z)
    D = l1_matrices(beta_star, x_sample, e_sample)
    _check_directions(D)
    vals, _ = _maximize(Z, D, p, 2.0, 2.0 * sigma, 1.0)
    return vals


def sample_L1(sigma: float, beta_star, x_sample, e_sample, sigma_factor, p: float,
              n_draws: int, seed, saa_size: int = DEFAULT_SAA) -> LimitSampleBatch:
    """Draws of the linear-regression limit law L1 with an SAA penalty.

    The penalty expectation averages over ``saa_size`` pairs (X_i, e_i)
    resampled with replacement from the supplied rows.
    """
    seed = as_seed(seed)
    X = _as_rows(x_sample)
    e = np.asarray(e_sample, dtype=float).reshape(-1)
    if X.shape[0] == 0 or e.size == 0:
        raise EmptyInputError("L1 needs nonempty predictor and error samples")
    if X.shape[0] != e.size:
        raise DimensionError(f"{X.shape[0]} predictor rows but {e.size} errors; samples must be paired")
    idx = seed.stream(_SAA_STREAM).integers(0, e.size, size=saa_size)
    D = l1_matrices(beta_star, X[idx], e[idx])
    _check_directions(D)
    Z = gaussian_draws(sigma_factor, n_draws, seed)
    if Z.shape[1] != D.shape[1]:
        raise DimensionError("covariance factor and beta* disagree in dimension")
    vals, res = _maximize(Z, D, p, 2.0, 2.0 * sigma, 1.0)
    meta = {"sigma": sigma, "p": p, "saa_size": saa_size, "max_gradient_norm": res}
    return LimitSampleBatch("L1", np.maximum(vals, 0.0), seed, meta)


def error_factor(e_sample) -> float:
    """E[e^2] / (E[e^2] - (E|e|)^2) from an error sample."""
    e = np.asarray(e_sample, dtype=float)
    m2 = float(np.mean(e * e))
    m1 = float(np.mean(np.abs(e)))
    return m2 / (m2 - m1 * m1)


def l2_draw(Z, q: float, factor: float = NORMAL_ERROR_FACTOR) -> np.ndarray:
    return factor * lp_norm(_as_rows(Z), q, axis=1) ** 2


def sample_L2(sigma_factor, q: float, n_draws: int, seed,
              factor: float = NORMAL_ERROR_FACTOR) -> LimitSampleBatch:
    """Draws of factor * ||Z||_q^2 with Z ~ N(0, Sigma)."""
    if not factor > 0:
        raise ConfigError(f"error factor must be positive, got {factor}")
    seed = as_seed(seed)
    Z = gaussian_draws(sigma_factor, n_draws, seed)
    return LimitSampleBatch("L2", l2_draw(Z, q, factor), seed, {"q": q, "error_factor": factor})


def l4_draw(Z, q: float) -> np.ndarray:
    return lp_norm(_as_rows(Z), q, axis=1)


def sample_L4(moment_factor, q: float, n_draws: int, seed) -> LimitSampleBatch:
    """Draws of ||Z||_q with Z ~ N(0, E[XX'])."""
    seed = as_seed(seed)
    Z = gaussian_draws(moment_factor, n_draws, seed)
    return LimitSampleBatch("L4", l4_draw(Z, q), seed, {"q": q})


def _type1(sorted_vals: np.ndarray, level: float) -> float:
    n = sorted_vals.shape[-1]
    # round before ceil so that e.g. 0.95 * 100 picks the 95th order statistic
    k = min(n, max(1, math.ceil(round(level * n, 9))))
    return sorted_vals[..., k - 1]


def quantile(batch: LimitSampleBatch | np.ndarray, level: float, n_boot: int = 200,
             seed=None) -> QuantileEstimate:
    """Inverse-ECDF quantile with a bootstrap standard error."""
    if not 0 < level < 1:
        raise ConfigError(f"quantile level must lie in (0, 1), got {level}")
    values = batch.values if isinstance(batch, LimitSampleBatch) else np.asarray(batch, float)
    if values.size == 0:
        raise EmptyInputError("cannot take a quantile of an empty batch")
    if seed is None:
        seed = batch.seed if isinstance(batch, LimitSampleBatch) else RngSeed(0)
    v = np.sort(values)
    est = float(_type1(v, level))
    rng = as_seed(seed).stream(_BOOT_STREAM)
    boots = np.sort(v[rng.integers(0, v.size, size=(n_boot, v.size))], axis=1)
    se = float(np.std(_type1(boots, level), ddof=1)) if n_boot > 1 else 0.0
    return QuantileEstimate(level, est, int(v.size), se)


def lambda_highdim(n: int, d: int, alpha: float) -> float:
    """pi/(pi-2) * Phi^{-1}(1 - alpha/(2d)) / sqrt(n)."""
    if n < 1 or d < 1:
        raise ConfigError("n and d must be positive")
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    tail = alpha / (2.0 * d)
    if tail >= 1:
        raise ConfigError("alpha/(2d) must be below 1")
    return NORMAL_ERROR_FACTOR * float(norm.isf(tail)) / math.sqrt(n)


def growth_C(x_sample, n: int) -> float:
    """Plug-in E||X||_inf / sqrt(n)."""
    X = _as_rows(x_sample)
    if X.size == 0:
        raise EmptyInputError("growth_C needs a nonempty sample")
    return float(np.mean(np.max(np.abs(X), axis=1))) / math.sqrt(n)


def write_batch_csv(batch: LimitSampleBatch, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["law", "index", "value"])
        for i, v in enumerate(batch.values):
            w.writerow([batch.law, i, repr(float(v))])


def read_batch_csv(path) -> tuple[str, np.ndarray]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return "", np.zeros(0)
    rows.sort(key=lambda r: int(r["index"]))
    return rows[0]["law"], np.array([float(r["value"]) for r in rows])


__all__ = [
    "LimitSampleBatch", "QuantileEstimate", "UnboundedLawError", "NORMAL_ERROR_FACTOR",
    "covariance_factor", "second_moment", "gaussian_draws", "rbar_draw", "sample_rbar",
    "rbar_one_draw", "sample_rbar_one", "l1_draw", "sample_L1", "error_factor", "l2_draw",
    "sample_L2", "l4_draw", "sample_L4", "quantile", "lambda_highdim", "growth_C",
    "write_batch_csv", "read_batch_csv",
]
