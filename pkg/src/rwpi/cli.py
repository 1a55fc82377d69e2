"""Command-line entry point: ``rwpi <verb> [flags]``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import asdict, is_dataclass, replace
from pathlib import Path

import numpy as np

from . import dro_worstcase as dro
from . import limit_laws as ll
from . import pipeline as pl
from . import rwp_profile as rp
from . import solvers as sv
from .core import (
    CostSpec,
    RngSeed,
    RWPIError,
    linear_regression_equation,
    logistic_equation,
    mean_equation,
    read_csv,
    standardize,
    write_csv,
)

SIG_DIGITS = 12
QUANTILE_LEVELS = (0.5, 0.9, 0.95)


class UsageError(Exception):
    """Bad flag combination detected after argparse succeeded."""


# ---------------------------------------------------------------------------
# JSON output


def _plain(obj):
    """Convert results into JSON-ready values, floats rounded to 12 digits."""
    if isinstance(obj, RngSeed):
        return obj.master
    if is_dataclass(obj) and not isinstance(obj, type):
        out = {}
        for k, v in asdict(obj).items():
            out["lambda" if k == "lam" else k] = v
        return _plain(out)
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return float(format(v, f".{SIG_DIGITS}g"))
    return obj


def dumps(result) -> str:
    return json.dumps(_plain(result), sort_keys=True, indent=2) + "\n"


def emit_json(result, path=None) -> None:
    text = dumps(result)
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror}") from exc


# ---------------------------------------------------------------------------
# helpers


def _norm_exponent(text: str) -> float:
    t = text.strip().lower()
    if t in ("inf", "infinity", "infty"):
        return math.inf
    v = float(t)
    if not v >= 1:
        raise argparse.ArgumentTypeError(f"exponent must be >= 1 or inf, got {text}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _count(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text}")
    return v


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def read_beta(path) -> np.ndarray:
    """Coefficients from a JSON file (list or object with "beta") or whitespace text."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        try:
            return np.array([float(t) for t in text.replace(",", " ").split()])
        except ValueError:
            raise ValueError(f"{path}: cannot parse coefficients") from None
    if isinstance(obj, dict):
        obj = obj.get("beta")
    if not isinstance(obj, list):
        raise ValueError(f"{path}: expected a list of coefficients or an object with 'beta'")
    return np.array(obj, dtype=float)


def _single_column(path, response: str | None) -> np.ndarray:
    """One column of a headered CSV: ``response`` if named, else the first."""
    try:
        with Path(path).open(newline="", encoding="utf-8") as fh:
            header = next(csv.reader(fh))
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror}") from exc
    except StopIteration:
        raise ValueError(f"{path}: empty file") from None
    name = response or header[0].strip()
    ds = read_csv(path, name)
    return ds.y


# ---------------------------------------------------------------------------
# verbs


def cmd_gen_data(a):
    ds, beta = pl.generate_linear_data(a.n, a.d, a.sigma, a.seed)
    write_csv(a.out, ds)
    return {"n": a.n, "d": a.d, "sigma": a.sigma, "seed": a.seed, "beta_star": beta, "out": a.out}


def _need(a, flag, parser):
    if getattr(a, flag.lstrip("-").replace("-", "_")) is None:
        raise UsageError(f"{parser}: {flag} is required here")


def cmd_select_lambda(a):
    method = a.method.upper()
    if method == "HIGHDIM":
        ds = read_csv(a.data, a.response) if a.data else None
        if a.d is None and ds is None:
            raise UsageError("select-lambda: --d (or --data) is required for --method highdim")
        d = a.d if a.d is not None else ds.d
        choice = pl.select_lambda_linear(ds, a.n, a.alpha, a.q, "HIGHDIM", seed=a.seed, d=d)
        out = choice.to_dict()
        out["d"] = d
        if ds is not None:
            out["growth_C"] = ll.growth_C(ds.X, a.n)
        return out
    _need(a, "--data", "select-lambda")
    if method == "L4":
        ds = read_csv(a.data, a.response, kind="binary")
        choice = pl.select_lambda_logistic(ds, a.alpha, a.q, a.mc, a.seed)
        out = choice.to_dict()
        out["n"] = ds.n
        return out
    ds = read_csv(a.data, a.response)
    l1 = pl.l1_plugin_inputs(ds) if method == "L1" else None
    choice = pl.select_lambda_linear(ds, a.n, a.alpha, a.q, method, a.mc, a.seed, l1_inputs=l1)
    out = choice.to_dict()
    out["quantile_se"] = choice.quantile_se
    return out


def cmd_fit(a):
    lam = a.__dict__["lambda"]
    if lam.lower() == "cv" and a.seed is None:
        raise UsageError("fit: --seed is required with --lambda cv")
    kind = "binary" if a.model == "logistic" else "regression"
    ds = read_csv(a.data, a.response, kind)
    if a.standardize:
        ds = standardize(ds)
    if a.model == "ols":
        res = sv.fit_ols(ds)
    else:
        objective = "sqrt-lasso" if a.model == "sqrt-lasso" else "logistic"
        if lam.lower() == "cv":
            lam = sv.cross_validate_lambda(ds, a.folds, None, objective, a.seed, a.p)
        else:
            lam = float(lam)
        fit = sv.fit_sqrt_lasso if a.model == "sqrt-lasso" else sv.fit_logistic_lp
        res = fit(ds, lam, a.p)
    result = {k: v for k, v in _plain(res).items() if k != "history"}
    emit_json(result, a.out)
    return None


def cmd_worst_case(a):
    if a.form == "dual-numeric" and a.loss != "square":
        raise UsageError("worst-case: --form dual-numeric is only available for --loss square")
    kind = "regression" if a.loss == "square" else "binary"
    ds = read_csv(a.data, a.response, kind)
    beta = read_beta(a.beta_file)
    if a.loss == "square":
        if a.form == "dual-numeric":
            return dro.worstcase_dual_numeric(ds, beta, a.delta, a.p, a.barbeta)
        return dro.worstcase_linear_closed(ds, beta, a.delta, a.p, a.barbeta)
    if a.loss == "logistic":
        return dro.worstcase_logistic_closed(ds, beta, a.delta, a.p)
    return dro.worstcase_hinge_closed(ds, beta, a.delta, a.p)


def cmd_rwp(a):
    if a.mode == "mean":
        _need(a, "--theta", "rwp")
        w = _single_column(a.data, a.response)
        return rp.rwp_mean(w, a.theta, a.rho)
    if a.mode == "linear-q2":
        _need(a, "--beta-file", "rwp")
        ds = read_csv(a.data, a.response or "y")
        return rp.rwp_linear_q2(ds, read_beta(a.beta_file))
    # generic
    cost = CostSpec(a.q, a.rho, modified=a.equation != "mean")
    if a.equation == "mean":
        _need(a, "--theta", "rwp")
        w = _single_column(a.data, a.response)
        return rp.rwp_generic_dual(w, mean_equation(), [a.theta], cost, seed=a.seed)
    _need(a, "--beta-file", "rwp")
    kind = "binary" if a.equation == "logistic" else "regression"
    ds = read_csv(a.data, a.response or "y", kind)
    eq = linear_regression_equation(ds.d) if kind == "regression" else logistic_equation(ds.d)
    W = np.column_stack([ds.X, ds.y])
    return rp.rwp_generic_dual(W, eq, read_beta(a.beta_file), cost, seed=a.seed)


def _summary(batch, levels=QUANTILE_LEVELS):
    out = {"law": batch.law, "draws": len(batch), "seed": batch.seed, "meta": batch.meta}
    if len(batch):
        out["mean"] = float(np.mean(batch.values))
        out["quantiles"] = {
            format(lv, "g"): {"value": q.value, "standard_error": q.standard_error}
            for lv in levels
            for q in [ll.quantile(batch, lv)]
        }
    return out


def _identity_or_data(a, second=False):
    if a.data:
        ds = read_csv(a.data, a.response or "y")
        M = ll.second_moment(ds.X) if second else np.atleast_2d(np.cov(ds.X, rowvar=False))
        return ll.covariance_factor(M)
    if a.d is None:
        raise UsageError(f"simulate-limit: --law {a.law} needs --data or --d")
    return np.eye(a.d)


def cmd_simulate_limit(a):
    seed = RngSeed(a.seed)
    if a.law == "l2":
        batch = ll.sample_L2(_identity_or_data(a), a.q, a.draws, seed, factor=a.factor)
    elif a.law == "l4":
        batch = ll.sample_L4(_identity_or_data(a, second=True), a.q, a.draws, seed)
    elif a.law == "l1":
        _need(a, "--data", "simulate-limit")
        ds = read_csv(a.data, a.response or "y")
        li = pl.l1_plugin_inputs(ds)
        factor = ll.covariance_factor(np.atleast_2d(np.cov(ds.X, rowvar=False)))
        p = CostSpec(a.q).p
        batch = ll.sample_L1(li.sigma, li.beta_star, li.x_sample, li.e_sample, factor, p,
                             a.draws, seed, saa_size=a.saa)
    else:
        _need(a, "--data", "simulate-limit")
        p = CostSpec(a.q).p
        if a.mode == "mean":
            w = _single_column(a.data, a.response)
            theta = float(np.mean(w)) if a.theta is None else a.theta
            h = (w - theta).reshape(-1, 1)
            dh = np.ones((w.size, 1, 1))
        else:
            _need(a, "--beta-file", "simulate-limit")
            ds = read_csv(a.data, a.response or "y")
            beta = read_beta(a.beta_file)
            resid = ds.y - ds.X @ beta
            h = resid[:, None] * ds.X
            eye = np.eye(ds.d)
            dh = resid[:, None, None] * eye[None] - ds.X[:, :, None] * beta[None, None, :]
        if a.law == "rbar":
            batch = ll.sample_rbar(a.rho, h, dh, p, a.draws, seed, saa_size=a.saa)
        else:
            batch = ll.sample_rbar_one(h, dh, p, a.draws, seed, saa_size=a.saa)
    if a.out:
        ll.write_batch_csv(batch, a.out)
    return _summary(batch)


def cmd_experiment(a):
    cfg = pl.load_config(a.config)
    if a.full:
        cfg = replace(cfg, reps=100, test_size=10_000)
    rows = pl.run_experiment(cfg, threads=a.threads)
    if a.rows_out:
        try:
            Path(a.rows_out).write_text(pl.rows_csv(rows), encoding="utf-8")
        except OSError as exc:
            raise OSError(f"{a.rows_out}: {exc.strerror}") from exc
    aggregates = pl.aggregate(rows)
    result = {
        "config": {k: v for k, v in asdict(cfg).items() if v is not None},
        "aggregates": aggregates,
        "digest": pl.digest(rows),
    }
    if any(r.coverage_hit is not None for r in rows):
        result["coverage"] = pl.coverage_probability(rows)
    emit_json(result, a.out)
    return None


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=_positive_int, default=None,
                        help="worker threads (default: available CPUs); results do not depend on it")

    parser = argparse.ArgumentParser(prog="rwpi", parents=[common],
                                     description="Robust Wasserstein profile inference")
    sub = parser.add_subparsers(dest="verb", required=True, metavar="verb")

    g = sub.add_parser("gen-data", parents=[common], help="simulate the sparse linear model")
    g.add_argument("--n", type=_positive_int, required=True)
    g.add_argument("--d", type=_positive_int, required=True)
    g.add_argument("--sigma", type=float, required=True)
    g.add_argument("--seed", type=_seed, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("select-lambda", parents=[common], help="choose the penalty from a limit law")
    s.add_argument("--method", choices=["l1", "l2", "l4", "highdim"], required=True)
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--n", type=_positive_int, required=True)
    s.add_argument("--d", type=_positive_int)
    s.add_argument("--data")
    s.add_argument("--response", default="y")
    s.add_argument("--q", type=_norm_exponent, default=math.inf)
    s.add_argument("--mc", type=_positive_int, default=1000)
    s.add_argument("--seed", type=_seed, required=True)
    s.set_defaults(func=cmd_select_lambda)

    f = sub.add_parser("fit", parents=[common], help="fit sqrt-lasso, logistic or OLS")
    f.add_argument("--model", choices=["sqrt-lasso", "logistic", "ols"], required=True)
    f.add_argument("--lambda", default="0", help="penalty, or 'cv' for cross-validation")
    f.add_argument("--p", type=float, choices=[1.0, 2.0], default=1.0)
    f.add_argument("--data", required=True)
    f.add_argument("--response", default="y")
    f.add_argument("--out")
    f.add_argument("--standardize", action="store_true")
    f.add_argument("--folds", type=_positive_int, default=10)
    f.add_argument("--seed", type=_seed, default=None)
    f.set_defaults(func=cmd_fit)

    w = sub.add_parser("worst-case", parents=[common], help="worst-case loss over a Wasserstein ball")
    w.add_argument("--loss", choices=["square", "logistic", "hinge"], required=True)
    w.add_argument("--delta", type=float, required=True)
    w.add_argument("--p", type=_norm_exponent, required=True)
    w.add_argument("--data", required=True)
    w.add_argument("--response", default="y")
    w.add_argument("--beta-file", required=True)
    w.add_argument("--form", choices=["closed", "dual-numeric"], default="closed")
    w.add_argument("--barbeta", action="store_true", help="let the response move too")
    w.set_defaults(func=cmd_worst_case)

    r = sub.add_parser("rwp", parents=[common], help="evaluate the profile function")
    r.add_argument("--mode", choices=["mean", "linear-q2", "generic"], required=True)
    r.add_argument("--theta", type=float)
    r.add_argument("--beta-file")
    r.add_argument("--rho", type=float, default=2.0)
    r.add_argument("--data", required=True)
    r.add_argument("--response")
    r.add_argument("--q", type=_norm_exponent, default=2.0)
    r.add_argument("--equation", choices=["mean", "linear", "logistic"], default="linear")
    r.add_argument("--seed", type=_seed, default=0)
    r.set_defaults(func=cmd_rwp)

    m = sub.add_parser("simulate-limit", parents=[common], help="sample a limit law")
    m.add_argument("--law", choices=["rbar", "rbar1", "l1", "l2", "l4"], required=True)
    m.add_argument("--draws", type=_count, required=True)
    m.add_argument("--seed", type=_seed, required=True)
    m.add_argument("--data")
    m.add_argument("--response")
    m.add_argument("--d", type=_positive_int)
    m.add_argument("--q", type=_norm_exponent, default=math.inf)
    m.add_argument("--rho", type=float, default=2.0)
    m.add_argument("--mode", choices=["mean", "linear"], default="mean")
    m.add_argument("--theta", type=float)
    m.add_argument("--beta-file")
    m.add_argument("--factor", type=float, default=ll.NORMAL_ERROR_FACTOR)
    m.add_argument("--saa", type=_positive_int, default=ll.DEFAULT_SAA)
    m.add_argument("--out")
    m.set_defaults(func=cmd_simulate_limit)

    e = sub.add_parser("experiment", parents=[common], help="run a replicated experiment")
    e.add_argument("--config", required=True)
    e.add_argument("--out")
    e.add_argument("--rows-out")
    e.add_argument("--full", action="store_true", help="100 replications and N=10000 test rows")
    e.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    if a.threads is None:
        a.threads = os.cpu_count() or 1
    try:
        result = a.func(a)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"rwpi: error: {exc}", file=sys.stderr)
        return 2
    except (RWPIError, ValueError, OSError, ArithmeticError) as exc:
        print(f"rwpi: {exc}", file=sys.stderr)
        return 1
    if result is not None:
        emit_json(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
