"""Regularization selection, synthetic data, and the experiment harness."""

from __future__ import annotations

import csv
import hashlib
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import limit_laws as ll
from .core import (
    ConfigError,
    Dataset,
    EmptyInputError,
    RngSeed,
    Standardizer,
    as_seed,
    dual_exponent,
    read_csv,
)
from .dro_worstcase import worstcase_linear_closed
from .solvers import RankError, cross_validate_lambda, default_grid, fit_ols, fit_sqrt_lasso

LINEAR_METHODS = ("L1", "L2", "HIGHDIM")
ROW_METHODS = ("RWPI", "GLASSO_CV", "OLS")


@dataclass(frozen=True)
class RegularizationChoice:
    alpha: float
    method: str
    mc_draws: int
    eta_hat: float
    delta: float
    lam: float
    seed: RngSeed
    n: int
    quantile_se: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method == "L4":
            ok = math.isclose(self.lam, self.delta, rel_tol=1e-12, abs_tol=0.0)
        else:
            ok = math.isclose(self.delta, self.lam * self.lam, rel_tol=1e-12, abs_tol=1e-300)
        if not ok:
            raise ValueError(f"inconsistent radius/penalty pair for method {self.method}")

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha, "method": self.method, "mc_draws": self.mc_draws,
            "eta_hat": self.eta_hat, "delta": self.delta, "lambda": self.lam,
            "seed": self.seed.master,
        }


@dataclass(frozen=True)
class L1Inputs:
    """Plug-in ingredients of L1: error sd, coefficients and paired SAA rows."""

    sigma: float
    beta_star: np.ndarray
    x_sample: np.ndarray
    e_sample: np.ndarray
    saa_size: int = ll.DEFAULT_SAA


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


def _check_draws(mc_draws: int) -> int:
    if int(mc_draws) < 1:
        raise ConfigError("mc_draws must be at least 1")
    return int(mc_draws)


def _covariance(source) -> np.ndarray:
    if isinstance(source, Dataset):
        if source.n < 2:
            raise EmptyInputError("need at least two rows for a plug-in covariance")
        return np.atleast_2d(np.cov(source.X, rowvar=False))
    C = np.atleast_2d(np.asarray(source, dtype=float))
    if C.shape[0] != C.shape[1]:
        raise ConfigError(f"covariance must be square, got shape {C.shape}")
    return C


def select_lambda_linear(source, n: int, alpha: float, q: float = math.inf, method: str = "L2",
                         mc_draws: int = 1000, seed=0, d: int | None = None,
                         error_factor: float = ll.NORMAL_ERROR_FACTOR,
                         l1_inputs: L1Inputs | None = None) -> RegularizationChoice:
    """Penalty for square-root lasso from a limit-law quantile.

    ``source`` is a Dataset (its sample covariance is the plug-in for Cov[X])
    or a covariance matrix. HIGHDIM only needs the dimension and ignores it.
    """
    alpha = _check_alpha(alpha)
    if method not in LINEAR_METHODS:
        raise ConfigError(f"unknown linear selection method {method!r}")
    if n < 1:
        raise ConfigError("n must be positive")
    seed = as_seed(seed)
    if method == "HIGHDIM":
        if d is None:
            if source is None:
                raise ConfigError("HIGHDIM needs the dimension d")
            d = source.d if isinstance(source, Dataset) else _covariance(source).shape[0]
        lam = ll.lambda_highdim(n, d, alpha)
        return RegularizationChoice(alpha, method, 0, n * lam * lam, lam * lam, lam, seed, n,
                                    meta={"d": d})
    mc_draws = _check_draws(mc_draws)
    if source is None:
        raise ConfigError(f"{method} needs a predictor sample or covariance")
    factor = ll.covariance_factor(_covariance(source))
    if method == "L2":
        batch = ll.sample_L2(factor, q, mc_draws, seed, factor=error_factor)
    else:
        if l1_inputs is None:
            raise ConfigError("L1 needs an error model and SAA inputs (l1_inputs)")
        li = l1_inputs
        batch = ll.sample_L1(li.sigma, li.beta_star, li.x_sample, li.e_sample, factor,
                             dual_exponent(q), mc_draws, seed, saa_size=li.saa_size)
    est = ll.quantile(batch, 1.0 - alpha)
    eta = max(est.value, 0.0)
    delta = eta / n
    return RegularizationChoice(alpha, method, mc_draws, eta, delta, math.sqrt(delta), seed, n,
                                est.standard_error, {"q": q, **batch.meta})


def select_lambda_logistic(ds: Dataset, alpha: float, q: float = math.inf,
                           mc_draws: int = 1000, seed=0) -> RegularizationChoice:
    """Penalty for lp-penalized logistic regression from the L4 quantile."""
    ds.require("binary")
    alpha = _check_alpha(alpha)
    mc_draws = _check_draws(mc_draws)
    seed = as_seed(seed)
    factor = ll.covariance_factor(ll.second_moment(ds.X))
    batch = ll.sample_L4(factor, q, mc_draws, seed)
    est = ll.quantile(batch, 1.0 - alpha)
    lam = est.value / math.sqrt(ds.n)
    return RegularizationChoice(alpha, "L4", mc_draws, est.value, lam, lam, seed, ds.n,
                                est.standard_error, {"q": q})


# ---------------------------------------------------------------------------
# synthetic data


@lru_cache(maxsize=16)
def ar_factor(d: int, rho: float = 0.5) -> np.ndarray:
    """Cholesky factor of the Toeplitz matrix rho^|k-j|."""
    k = np.arange(d)
    L = np.linalg.cholesky(rho ** np.abs(k[:, None] - k[None, :]))
    L.setflags(write=False)
    return L


def true_beta(d: int) -> np.ndarray:
    if d < 4:
        raise ConfigError(f"the synthetic model needs d >= 4, got {d}")
    beta = np.zeros(d)
    beta[[0, 1, 3]] = (3.0, 2.0, 1.5)
    return beta


def generate_linear_data(n: int, d: int, sigma: float, seed) -> tuple[Dataset, np.ndarray]:
    """Rows x ~ N(0, 0.5^|k-j|), y = 3x1 + 2x2 + 1.5x4 + N(0, sigma^2)."""
    beta = true_beta(d)
    if n < 1:
        raise ConfigError("n must be positive")
    if not sigma >= 0:
        raise ConfigError("sigma must be nonnegative")
    seed = as_seed(seed)
    X = seed.stream(0).standard_normal((n, d)) @ ar_factor(d).T
    e = sigma * seed.stream(1).standard_normal(n)
    return Dataset(X, X @ beta + e), beta


# ---------------------------------------------------------------------------
# experiments


@dataclass(frozen=True)
class ExperimentRow:
    rep: int
    method: str
    n: int
    d: int
    train_mse: float | None
    test_mse: float | None
    l1_err: float | None = None
    l2_err: float | None = None
    coverage_hit: bool | None = None
    lam: float | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = 350
    d: int = 50
    sigma: float = 10.0
    alpha: float = 0.05
    reps: int = 20
    test_size: int = 10_000
    methods: tuple[str, ...] = ("RWPI", "OLS")
    seed: int = 0
    method: str = "L2"
    q: float = math.inf
    mc_draws: int = 1000
    cv_folds: int = 10
    cv_grid: int = 50
    # None: predictors only for simulations, response too for csv data
    standardize_response: bool | None = None
    # csv experiments only
    data: str | None = None
    response: str = "y"
    train_size: int | None = None

    def __post_init__(self):
        for name in ("n", "d", "reps", "test_size", "mc_draws", "cv_folds", "cv_grid"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        bad = [m for m in self.methods if m not in ROW_METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown experiment methods {bad}; choose from {ROW_METHODS}")
        if self.method not in LINEAR_METHODS:
            raise ConfigError(f"unknown selection method {self.method!r}")
        _check_alpha(self.alpha)


_INT_KEYS = {"n", "d", "reps", "test_size", "seed", "mc_draws", "cv_folds", "cv_grid", "train_size"}
_FLOAT_KEYS = {"sigma", "alpha", "q"}


def parse_config(text: str) -> ExperimentConfig:
    """``key = value`` lines; ``#`` starts a comment."""
    known = {f.name for f in fields(ExperimentConfig)}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            if key in _INT_KEYS:
                values[key] = int(val)
            elif key in _FLOAT_KEYS:
                values[key] = float(val)
            elif key == "methods":
                values[key] = tuple(m.strip().upper() for m in val.split(",") if m.strip())
            elif key == "method":
                values[key] = val.upper()
            elif key == "standardize_response":
                if val.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(val)
                values[key] = val.lower() in ("true", "1", "yes")
            else:
                values[key] = val
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {val!r} for {key}") from None
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    return parse_config(text)


def _mse(ds: Dataset, beta) -> float:
    r = ds.y - ds.X @ beta
    return float(r @ r) / ds.n


def l1_plugin_inputs(train: Dataset) -> L1Inputs:
    """OLS plug-ins for the L1 law: coefficients, residuals and their sd."""
    try:
        ols = fit_ols(train)
    except RankError as exc:
        raise ConfigError(f"L1 selection needs an OLS plug-in: {exc}") from exc
    resid = train.y - train.X @ ols.beta
    return L1Inputs(math.sqrt(float(resid @ resid) / train.n), ols.beta, train.X, resid)


def _select(train: Dataset, cfg: ExperimentConfig, seed: RngSeed) -> RegularizationChoice:
    l1 = l1_plugin_inputs(train) if cfg.method == "L1" else None
    return select_lambda_linear(train, train.n, cfg.alpha, cfg.q, cfg.method, cfg.mc_draws,
                                seed, d=train.d, l1_inputs=l1)


def _replicate(rep: int, train: Dataset, test: Dataset, beta_star, noise_var,
               cfg: ExperimentConfig, seed: RngSeed) -> list[ExperimentRow]:
    """Standardize with training statistics, then fit every requested method.

    The response is always centered with the training mean and is scaled
    only when ``cfg.standardize_response`` asks for it.

    Errors are reported in the units of the modeled response, so they are in
    standardized units when the response is standardized.
    """
    st = Standardizer.fit(train, response=bool(cfg.standardize_response))
    # centered predictors and no intercept: the response must be centered too
    st = replace(st, y_mean=float(train.y.mean()))
    tr, te = st.transform(train), st.transform(test)
    y_scale = st.y_scale
    n, d = train.n, train.d

    def errors(beta):
        if beta_star is None:
            return None, None
        # back to the scale of the raw predictors
        diff = beta * y_scale / st.x_scale - beta_star
        return float(np.abs(diff).sum()), float(np.linalg.norm(diff))

    rows = []
    for method in cfg.methods:
        if method == "RWPI":
            choice = _select(tr, cfg, seed.child(0))
            fit = fit_sqrt_lasso(tr, choice.lam, 1)
            hit = None
            if noise_var is not None:
                wc = worstcase_linear_closed(tr, fit.beta, choice.delta, dual_exponent(cfg.q))
                hit = bool(noise_var <= wc.value * y_scale * y_scale)
            l1e, l2e = errors(fit.beta)
            rows.append(ExperimentRow(rep, method, n, d, _mse(tr, fit.beta),
                                      _mse(te, fit.beta), l1e, l2e, hit, choice.lam))
        elif method == "GLASSO_CV":
            lam = cross_validate_lambda(tr, cfg.cv_folds, default_grid(tr, "sqrt-lasso", size=cfg.cv_grid), "sqrt-lasso",
                                        seed.child(1))
            fit = fit_sqrt_lasso(tr, lam, 1)
            l1e, l2e = errors(fit.beta)
            rows.append(ExperimentRow(rep, method, n, d, _mse(tr, fit.beta),
                                      _mse(te, fit.beta), l1e, l2e, None, lam))
        else:
            try:
                fit = fit_ols(tr)
            except RankError:
                rows.append(ExperimentRow(rep, method, n, d, None, None))
                continue
            l1e, l2e = errors(fit.beta)
            rows.append(ExperimentRow(rep, method, n, d, _mse(tr, fit.beta),
                                      _mse(te, fit.beta), l1e, l2e, None, 0.0))
    return rows


def _run(jobs, threads: int | None) -> list[ExperimentRow]:
    threads = threads or os.cpu_count() or 1
    if threads == 1:
        results = [job() for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda job: job(), jobs))
    rows = [row for chunk in results for row in chunk]
    order = {m: i for i, m in enumerate(ROW_METHODS)}
    return sorted(rows, key=lambda r: (r.rep, order[r.method]))


def run_experiment_sim(cfg: ExperimentConfig, threads: int | None = None) -> list[ExperimentRow]:
    """Replications of the synthetic linear model; replication r uses child seed r."""
    master = RngSeed(cfg.seed)

    def job(rep):
        def go():
            seed = master.child(rep)
            train, beta = generate_linear_data(cfg.n, cfg.d, cfg.sigma, seed.child(0))
            test, _ = generate_linear_data(cfg.test_size, cfg.d, cfg.sigma, seed.child(1))
            return _replicate(rep, train, test, beta, cfg.sigma**2, cfg, seed.child(2))
        return go

    return _run([job(r) for r in range(cfg.reps)], threads)


def run_experiment_csv(path, response: str, train_size: int, reps: int, alpha: float, seed,
                       cfg: ExperimentConfig | None = None,
                       threads: int | None = None) -> list[ExperimentRow]:
    """Random train/test splits of a CSV data set."""
    ds = read_csv(path, response)
    if not 2 <= train_size < ds.n:
        raise ConfigError(f"train_size must be in [2, {ds.n - 1}] for {ds.n} rows, got {train_size}")
    base = cfg or ExperimentConfig()
    if base.standardize_response is None:
        base = replace(base, standardize_response=True)
    cfg = replace(base, reps=reps, alpha=alpha, seed=int(as_seed(seed).master),
                  n=train_size, d=ds.d)
    master = RngSeed(cfg.seed)

    def job(rep):
        def go():
            seed = master.child(rep)
            perm = seed.stream(0).permutation(ds.n)
            train, test = ds.subset(np.sort(perm[:train_size])), ds.subset(np.sort(perm[train_size:]))
            return _replicate(rep, train, test, None, None, cfg, seed.child(2))
        return go

    return _run([job(r) for r in range(reps)], threads)


def run_experiment(cfg: ExperimentConfig, threads: int | None = None) -> list[ExperimentRow]:
    if cfg.data is not None:
        if cfg.train_size is None:
            raise ConfigError("csv experiments need train_size")
        return run_experiment_csv(cfg.data, cfg.response, cfg.train_size, cfg.reps, cfg.alpha,
                                  cfg.seed, cfg, threads)
    return run_experiment_sim(cfg, threads)


def coverage_probability(rows) -> float:
    hits = [r.coverage_hit for r in rows if r.coverage_hit is not None]
    if not hits:
        raise EmptyInputError("no rows carry a coverage indicator")
    return sum(hits) / len(hits)


def _mean_sd(values):
    v = [x for x in values if x is not None]
    if not v:
        return None, None
    a = np.asarray(v, dtype=float)
    return float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else 0.0


def aggregate(rows) -> list[dict]:
    """Per-method means and standard deviations across replications."""
    out = []
    for method in ROW_METHODS:
        sel = [r for r in rows if r.method == method]
        if not sel:
            continue
        train_mean, train_sd = _mean_sd(r.train_mse for r in sel)
        test_mean, test_sd = _mean_sd(r.test_mse for r in sel)
        hits = [r.coverage_hit for r in sel if r.coverage_hit is not None]
        out.append({
            "method": method, "n": sel[0].n, "d": sel[0].d,
            "train_mean": train_mean, "train_sd": train_sd,
            "test_mean": test_mean, "test_sd": test_sd,
            "l1_mean": _mean_sd(r.l1_err for r in sel)[0],
            "l2_mean": _mean_sd(r.l2_err for r in sel)[0],
            "coverage": sum(hits) / len(hits) if hits else None,
        })
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".12g")
    return str(v)


def rows_csv(rows) -> str:
    buf = io.StringIO()
    names = [f.name for f in fields(ExperimentRow)]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for r in rows:
        d = asdict(r)
        w.writerow([_fmt(d[k]) for k in names])
    return buf.getvalue()


def digest(rows) -> str:
    """SHA-256 of the canonical row CSV."""
    return hashlib.sha256(rows_csv(rows).encode()).hexdigest()


__all__ = [
    "RegularizationChoice", "L1Inputs", "ExperimentRow", "ExperimentConfig",
    "select_lambda_linear", "select_lambda_logistic", "l1_plugin_inputs", "generate_linear_data", "true_beta",
    "ar_factor", "parse_config", "load_config", "run_experiment_sim", "run_experiment_csv",
    "run_experiment", "coverage_probability", "aggregate", "rows_csv", "digest",
]
