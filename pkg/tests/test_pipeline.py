import dataclasses
import math

import numpy as np
import pytest

from rwpi.core import ConfigError, Dataset, EmptyInputError, KindMismatchError, RngSeed, write_csv
from rwpi.limit_laws import lambda_highdim
from rwpi.pipeline import (
    ExperimentConfig,
    ExperimentRow,
    L1Inputs,
    RegularizationChoice,
    aggregate,
    ar_factor,
    coverage_probability,
    digest,
    generate_linear_data,
    l1_plugin_inputs,
    parse_config,
    rows_csv,
    run_experiment,
    run_experiment_csv,
    run_experiment_sim,
    select_lambda_linear,
    select_lambda_logistic,
    true_beta,
)

from conftest import random_binary

# mpmath: pi/(pi-2), chi-square(1) 0.95 quantile, Phi^{-1}(0.975)
NORMAL_FACTOR = 2.751938393884108661
CHI2_1_95 = 3.841458820694125958
PHI_975 = 1.959963984540054236


def test_choice_algebra_enforced():
    seed = RngSeed(0)
    RegularizationChoice(0.05, "L2", 10, 4.0, 0.04, 0.2, seed, 100)
    RegularizationChoice(0.05, "L4", 10, 2.0, 0.2, 0.2, seed, 100)
    with pytest.raises(ValueError):
        RegularizationChoice(0.05, "L2", 10, 4.0, 0.04, 0.3, seed, 100)
    with pytest.raises(ValueError):
        RegularizationChoice(0.05, "L4", 10, 2.0, 0.04, 0.2, seed, 100)


def test_choice_dict_keys():
    c = select_lambda_linear(np.eye(2), 100, 0.05, method="L2", mc_draws=50, seed=1)
    assert set(c.to_dict()) == {"alpha", "method", "mc_draws", "eta_hat", "delta", "lambda", "seed"}


def test_highdim_delegation():
    c = select_lambda_linear(None, 10_000, 0.05, method="HIGHDIM", d=300)
    assert c.lam == lambda_highdim(10_000, 300, 0.05)
    assert c.delta == pytest.approx(c.lam**2, rel=1e-15)
    assert c.eta_hat == pytest.approx(10_000 * c.lam**2, rel=1e-12)


def test_selection_errors(rng):
    with pytest.raises(ConfigError):
        select_lambda_linear(np.eye(2), 100, 0.05, mc_draws=0)
    with pytest.raises(ConfigError):
        select_lambda_linear(np.eye(2), 100, 1.5)
    with pytest.raises(ConfigError):
        select_lambda_linear(np.eye(2), 100, 0.05, method="L1")
    with pytest.raises(ConfigError):
        select_lambda_linear(np.eye(2), 100, 0.05, method="L3")
    with pytest.raises(KindMismatchError):
        select_lambda_logistic(Dataset(rng.standard_normal((5, 2)), rng.standard_normal(5)), 0.05)


def test_l2_selection_matches_chi_square_quantile():
    n = 400
    c = select_lambda_linear(np.eye(1), n, 0.05, q=2, method="L2", mc_draws=40_000, seed=3)
    expected = NORMAL_FACTOR * CHI2_1_95
    assert abs(c.eta_hat - expected) <= 3 * c.quantile_se
    assert c.lam == pytest.approx(math.sqrt(c.eta_hat / n), rel=1e-15)


def test_l4_selection_matches_half_normal_quantile():
    # columns with unit second moment: Ehat[X^2] = 1
    x = np.array([1.0, -1.0] * 50)
    ds = Dataset(x[:, None], np.where(np.arange(100) % 3 == 0, 1.0, -1.0), "binary")
    c = select_lambda_logistic(ds, 0.05, q=2, mc_draws=40_000, seed=5)
    assert abs(c.eta_hat - PHI_975) <= 3 * c.quantile_se
    assert c.lam == c.delta == pytest.approx(c.eta_hat / 10, rel=1e-15)


def test_lambda_nonincreasing_in_alpha(rng):
    ds = random_binary(rng, 50, 3)
    lams = [select_lambda_linear(np.eye(3), 100, a, mc_draws=500, seed=2).lam for a in (0.01, 0.05, 0.2, 0.6)]
    assert all(a >= b for a, b in zip(lams, lams[1:]))
    logit = [select_lambda_logistic(ds, a, mc_draws=500, seed=2).lam for a in (0.01, 0.5, 0.999)]
    assert all(a >= b for a, b in zip(logit, logit[1:]))


def test_l1_selection_below_l2_at_matched_seed():
    train, _ = generate_linear_data(300, 5, 2.0, 8)
    l1 = select_lambda_linear(train, 300, 0.05, method="L1", mc_draws=400, seed=4,
                              l1_inputs=l1_plugin_inputs(train))
    l2 = select_lambda_linear(train, 300, 0.05, method="L2", mc_draws=400, seed=4)
    assert l1.eta_hat <= l2.eta_hat + 3 * math.hypot(l1.quantile_se, l2.quantile_se)
    assert isinstance(l1_plugin_inputs(train), L1Inputs)


def test_true_beta_and_generator():
    assert np.array_equal(true_beta(6), [3, 2, 0, 1.5, 0, 0])
    with pytest.raises(ConfigError):
        true_beta(3)
    a, _ = generate_linear_data(20, 6, 10, 9)
    b, _ = generate_linear_data(20, 6, 10, 9)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
    L = ar_factor(5)
    assert np.allclose(L @ L.T, 0.5 ** np.abs(np.subtract.outer(np.arange(5), np.arange(5))))


def test_generator_covariance():
    ds, _ = generate_linear_data(100_000, 4, 1.0, 1)
    assert np.cov(ds.X, rowvar=False)[0, 1] == pytest.approx(0.5, abs=0.02)


def test_noiseless_ols_interpolates():
    cfg = ExperimentConfig(n=60, d=5, sigma=0.0, reps=2, test_size=50, methods=("OLS",), mc_draws=50)
    rows = run_experiment_sim(cfg, threads=1)
    assert all(r.train_mse < 1e-20 and r.test_mse < 1e-20 for r in rows)


def test_ols_rows_blank_when_underdetermined():
    cfg = ExperimentConfig(n=20, d=30, reps=1, test_size=10, mc_draws=50)
    rows = run_experiment_sim(cfg, threads=1)
    ols = [r for r in rows if r.method == "OLS"][0]
    assert ols.train_mse is None and ols.test_mse is None
    assert ",OLS,20,30,,,,,," in rows_csv(rows)


def test_small_experiment_rows_and_aggregates():
    cfg = ExperimentConfig(n=80, d=6, reps=3, test_size=200, methods=("RWPI", "GLASSO_CV", "OLS"),
                           mc_draws=100, cv_folds=4, cv_grid=8)
    rows = run_experiment_sim(cfg, threads=2)
    assert [r.method for r in rows[:3]] == ["RWPI", "GLASSO_CV", "OLS"]
    for r in rows:
        assert r.train_mse >= 0 and r.test_mse >= 0 and r.l1_err >= 0 and r.l2_err >= 0
    agg = {a["method"]: a for a in aggregate(rows)}
    assert set(agg["RWPI"]) == {"method", "n", "d", "train_mean", "train_sd", "test_mean", "test_sd",
                                "l1_mean", "l2_mean", "coverage"}
    test = [r.test_mse for r in rows if r.method == "RWPI"]
    assert agg["RWPI"]["test_mean"] == pytest.approx(np.mean(test))
    assert agg["RWPI"]["test_sd"] == pytest.approx(np.std(test, ddof=1))
    assert agg["OLS"]["coverage"] is None


def test_experiment_determinism_across_threads():
    cfg = ExperimentConfig(n=60, d=5, reps=4, test_size=100, mc_draws=100, seed=11)
    a = digest(run_experiment_sim(cfg, threads=1))
    b = digest(run_experiment_sim(cfg, threads=3))
    c = digest(run_experiment_sim(dataclasses.replace(cfg, seed=12), threads=1))
    assert a == b != c


def test_coverage_probability():
    def row(hit):
        return ExperimentRow(0, "RWPI", 1, 1, 0.0, 0.0, 0.0, 0.0, hit, 0.1)
    assert coverage_probability([row(True)] * 3) == 1
    assert coverage_probability([row(False)] * 3) == 0
    assert coverage_probability([row(True), row(False)]) == 0.5
    with pytest.raises(EmptyInputError):
        coverage_probability([])


def test_csv_experiment(tmp_path):
    ds, _ = generate_linear_data(60, 4, 1.0, 3)
    path = tmp_path / "d.csv"
    write_csv(path, ds)
    rows = run_experiment_csv(path, "y", 40, 2, 0.05, 7, ExperimentConfig(mc_draws=50))
    again = run_experiment_csv(path, "y", 40, 2, 0.05, 7, ExperimentConfig(mc_draws=50))
    assert rows_csv(rows) == rows_csv(again)
    assert all(r.l1_err is None and r.coverage_hit is None for r in rows)
    with pytest.raises(ConfigError):
        run_experiment_csv(path, "y", 60, 1, 0.05, 0)


def test_parse_config(tmp_path):
    cfg = parse_config("""
        # scaled table row
        n = 350
        d = 50
        methods = RWPI, OLS, glasso_cv
        alpha = 0.05  # confidence
        standardize_response = false
    """)
    assert cfg.n == 350 and cfg.methods == ("RWPI", "OLS", "GLASSO_CV")
    assert cfg.standardize_response is False
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("bogus = 1")
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("n = 3\nd = x")
    with pytest.raises(ConfigError):
        parse_config("methods = LASSO")
    ds, _ = generate_linear_data(30, 4, 1.0, 0)
    write_csv(tmp_path / "d.csv", ds)
    csv_cfg = parse_config(f"data = {tmp_path / 'd.csv'}\ntrain_size = 20\nreps = 1\nmc_draws = 20")
    assert len(run_experiment(csv_cfg, threads=1)) == 2
