import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from rwpi.core import ConfigError, DimensionError, EmptyInputError, RngSeed
from rwpi.limit_laws import (
    NORMAL_ERROR_FACTOR,
    LimitSampleBatch,
    UnboundedLawError,
    covariance_factor,
    gaussian_draws,
    growth_C,
    l1_draw,
    l2_draw,
    l4_draw,
    lambda_highdim,
    quantile,
    rbar_draw,
    rbar_one_draw,
    read_batch_csv,
    sample_L1,
    sample_L2,
    sample_L4,
    sample_rbar,
    sample_rbar_one,
    write_batch_csv,
)

# 40-digit mpmath evaluations of pi/(pi-2) * Phi^{-1}(1 - alpha/(2d)) / sqrt(n)
HIGHDIM_GOLDEN = [
    (100, 1, 0.05, 0.5393700139685854831),
    (10000, 300, 0.05, 0.1036056274735522652),
]


def _oracle_instance():
    r = np.random.default_rng(5)
    X = r.standard_normal((40, 3)).round(6)
    e = r.standard_normal(40).round(6)
    Z = r.standard_normal((3, 3)).round(6)
    Dh = r.standard_normal((30, 2, 2)).round(6)
    H = r.standard_normal((3, 2)).round(6)
    return X, e, Z, Dh, H


# optimal values from cvxpy (CLARABEL, gap tolerances 1e-12) on _oracle_instance
L1_ORACLE = {
    1.0: [0.6784095638135992, 1.0450017758277024, 1.3792923879721757],
    math.inf: [2.545488407354273, 1.952839538786412, 5.757035642377751],
}
RBAR_ORACLE = {
    (1.5, 2.0): [0.6221030249141495, 0.4531223274698179, 0.893410410478119],
    (3.0, 3.0): [0.8778794304378674, 0.47385536105843584, 1.4557486099668946],
    (1.0, 2.0): [0.4586838139759706, 0.3354315398233335, 0.6491572842288195],
}
RBAR_ONE_ORACLE = {
    2.0: [0.3618683850852508, 0.43319167795994673, 0.5831669977129756],
    1.0: [0.35308074135002215, 0.32520388774867864, 0.43848630696587465],
    math.inf: [0.36912464826803393, 0.46885562785109935, 0.6356078517830559],
}
L1_BETA, L1_SIGMA = np.array([1.0, -0.5, 0.0]), 1.3


@pytest.mark.parametrize("p", [1.0, math.inf])
def test_l1_draw_matches_conic_oracle(p):
    X, e, Z, _, _ = _oracle_instance()
    got = l1_draw(Z, L1_SIGMA, L1_BETA, X, e, p)
    assert np.allclose(got, L1_ORACLE[p], rtol=1e-8, atol=1e-9)


@pytest.mark.parametrize("p, rho", list(RBAR_ORACLE))
def test_rbar_draw_matches_conic_oracle(p, rho):
    _, _, _, Dh, H = _oracle_instance()
    assert np.allclose(rbar_draw(H, Dh, p, rho), RBAR_ORACLE[(p, rho)], rtol=1e-8, atol=1e-9)


def test_rbar_unbounded_when_derivatives_vanish():
    with pytest.raises(UnboundedLawError):
        sample_rbar(2.0, np.random.default_rng(0).standard_normal((20, 1)), np.zeros(20), 2, 5, 0)
    with pytest.raises(UnboundedLawError):
        sample_rbar_one(np.ones((5, 1)), np.zeros(5), 2, 5, 0)


def test_rbar_requires_rho_above_one():
    with pytest.raises(ConfigError):
        sample_rbar(1.0, np.ones((3, 1)), np.ones(3), 2, 5, 0)


def test_rbar_empty_batch():
    batch = sample_rbar(2.0, np.random.default_rng(0).standard_normal((10, 1)), np.ones(10), 2, 0, 0)
    assert len(batch) == 0


def test_rbar_mean_case_is_scaled_chi_square():
    w = np.random.default_rng(11).standard_normal(500) * 1.7
    h = w - w.mean()
    batch = sample_rbar(2.0, h, np.ones(h.size), 2, 10_000, RngSeed(4))
    s2 = float(np.mean(h * h))
    ks = stats.kstest(batch.values / s2, stats.chi2(1).cdf).statistic
    assert ks < 0.03
    se = batch.values.std(ddof=1) / math.sqrt(len(batch))
    assert abs(batch.values.mean() - s2) < 3 * se


def test_rbar_one_examples():
    H = np.array([[0.7], [-2.0]])
    assert np.allclose(rbar_one_draw(H, np.ones(5), 2), [0.7, 2.0])
    assert np.allclose(rbar_one_draw(H, np.array([1.0, 2.0, 1.0]), 2), [0.35, 1.0])


def test_rbar_one_mean_case_half_normal():
    w = np.random.default_rng(3).standard_normal(400)
    h = w - w.mean()
    batch = sample_rbar_one(h, np.ones(h.size), 2, 5000, 9)
    sd = math.sqrt(float(np.mean(h * h)))
    ks = stats.kstest(batch.values / sd, stats.halfnorm.cdf).statistic
    assert ks < 0.03


@pytest.mark.parametrize("p, rtol", [(2.0, 1e-7), (1.0, 1e-9), (math.inf, 1e-9)])
def test_rbar_one_matches_conic_oracle(p, rtol):
    # curved constraints only converge to the cutting-plane gap tolerance
    _, _, _, Dh, H = _oracle_instance()
    assert np.allclose(rbar_one_draw(H, Dh, p), RBAR_ONE_ORACLE[p], rtol=rtol, atol=0)


def test_rbar_one_multivariate_is_feasible_and_tight():
    _, _, _, Dh, H = _oracle_instance()
    vals = rbar_one_draw(H, Dh, 2)
    # any feasible z gives a lower bound; scaling H's direction to the boundary is one
    for h, v in zip(H, vals):
        z = h / np.max(np.linalg.norm(np.einsum("r,nrm->nm", h, Dh), axis=1))
        assert h @ z <= v + 1e-8
        assert v >= 0


def test_l1_zero_beta_reduces_to_quadratic():
    r = np.random.default_rng(8)
    X, e = r.standard_normal((200, 2)), r.standard_normal(200)
    Z = r.standard_normal((4, 2))
    sigma = 1.5
    expected = sigma**2 * np.sum(Z * Z, axis=1) / np.mean(e * e)
    assert np.allclose(l1_draw(Z, sigma, np.zeros(2), X, e, 2), expected, rtol=1e-10)


def test_l1_fixed_zero_draw():
    r = np.random.default_rng(8)
    X, e = r.standard_normal((50, 2)), r.standard_normal(50)
    for p in (1.0, 2.0, math.inf):
        assert l1_draw(np.zeros((1, 2)), 1.0, [1.0, 2.0], X, e, p)[0] == pytest.approx(0.0, abs=1e-12)


def test_l1_dominated_by_l2_at_matched_draws():
    r = np.random.default_rng(21)
    X, e = r.standard_normal((2000, 1)), r.standard_normal(2000)
    seed = RngSeed(5)
    l1 = sample_L1(1.0, [2.0], X, e, np.eye(1), 2, 4000, seed)
    l2 = sample_L2(np.eye(1), 2, 4000, seed)
    for level in (0.5, 0.9, 0.95):
        a, b = quantile(l1, level), quantile(l2, level)
        assert a.value <= b.value + 3 * math.hypot(a.standard_error, b.standard_error)


def test_l1_requires_paired_samples():
    with pytest.raises(DimensionError):
        sample_L1(1.0, [1.0], np.ones((3, 1)), np.ones(4), np.eye(1), 2, 5, 0)
    with pytest.raises(EmptyInputError):
        sample_L1(1.0, [1.0], np.ones((0, 1)), np.ones(0), np.eye(1), 2, 5, 0)


def test_l2_examples():
    assert l2_draw([[0.5, -0.5]], math.inf)[0] == pytest.approx(NORMAL_ERROR_FACTOR * 0.25)
    assert np.all(sample_L2(np.zeros((3, 3)), 2, 50, 0).values == 0)
    with pytest.raises(ConfigError):
        sample_L2(np.eye(1), 2, 5, 0, factor=0.0)


def test_l2_mean_matches_factor():
    batch = sample_L2(np.eye(1), 2, 100_000, RngSeed(1))
    se = batch.values.std(ddof=1) / math.sqrt(len(batch))
    assert abs(batch.values.mean() - math.pi / (math.pi - 2)) < 3 * se


def test_l4_examples():
    assert l4_draw([[3.0, -4.0]], 2)[0] == 5.0
    assert l4_draw([[3.0, -4.0]], 1)[0] == 7.0
    batch = sample_L4(np.eye(1), 2, 50_000, RngSeed(2))
    se = batch.values.std(ddof=1) / math.sqrt(len(batch))
    assert abs(batch.values.mean() - math.sqrt(2 / math.pi)) < 3 * se


def test_samplers_reproducible():
    F = covariance_factor([[1.0, 0.5], [0.5, 1.0]])
    assert np.array_equal(sample_L2(F, 1, 3000, 7).values, sample_L2(F, 1, 3000, 7).values)
    assert not np.array_equal(sample_L2(F, 1, 3000, 7).values, sample_L2(F, 1, 3000, 8).values)
    # extending a batch keeps its prefix: draws are indexed by substream block
    assert np.array_equal(gaussian_draws(F, 3000, 7)[:1500], gaussian_draws(F, 1500, 7))


def test_covariance_factor_accepts_singular():
    C = np.array([[1.0, 1.0], [1.0, 1.0]])
    F = covariance_factor(C)
    assert np.allclose(F @ F.T, C)
    F = covariance_factor(np.array([[1.0, 0.0], [0.0, -1e-15]]))
    assert np.all(np.isfinite(F))


def test_quantile_examples():
    vals = np.arange(1, 101, dtype=float)
    assert quantile(vals, 0.95).value == 95
    assert quantile(vals, 0.999).value == 100
    assert quantile(np.full(30, 2.5), 0.3).value == 2.5
    with pytest.raises(EmptyInputError):
        quantile(np.zeros(0), 0.5)
    with pytest.raises(ConfigError):
        quantile(vals, 1.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=60), st.floats(0.01, 0.98), st.floats(0.01, 0.98))
def test_quantile_monotone_in_level(vals, a, b):
    lo, hi = sorted([a, b])
    assert quantile(vals, lo, n_boot=2).value <= quantile(vals, hi, n_boot=2).value
    assert quantile(vals, 1 - 1e-9, n_boot=2).value == max(vals)


def test_quantile_standard_error_reasonable():
    batch = sample_L4(np.eye(1), 2, 4000, 3)
    est = quantile(batch, 0.9)
    assert 0 < est.standard_error < 0.1
    assert est.sample_size == 4000


@pytest.mark.parametrize("n, d, alpha, expected", HIGHDIM_GOLDEN)
def test_lambda_highdim_golden(n, d, alpha, expected):
    assert lambda_highdim(n, d, alpha) == pytest.approx(expected, abs=1e-10)


@settings(max_examples=50)
@given(st.integers(1, 10**6), st.integers(1, 1000), st.floats(1e-4, 0.9))
def test_lambda_highdim_monotone(n, d, alpha):
    base = lambda_highdim(n, d, alpha)
    assert lambda_highdim(4 * n, d, alpha) == pytest.approx(base / 2, rel=1e-12)
    assert lambda_highdim(n + 1, d, alpha) < base
    assert lambda_highdim(n, d + 1, alpha) > base
    assert lambda_highdim(n, d, alpha * 0.9) > base


def test_lambda_highdim_errors():
    with pytest.raises(ConfigError):
        lambda_highdim(0, 1, 0.05)
    with pytest.raises(ConfigError):
        lambda_highdim(10, 1, 1.5)


def test_growth_C_examples():
    assert growth_C(np.zeros((1, 4)), 9) == 0
    assert growth_C([[1.0], [-3.0]], 4) == 1.0
    with pytest.raises(EmptyInputError):
        growth_C(np.zeros((0, 2)), 4)


@pytest.mark.parametrize("d", [10, 100, 1000])
def test_growth_C_tracks_max_gaussian(d):
    r = np.random.default_rng(d)
    X = r.standard_normal((2000, d))
    # Monte Carlo oracle for E max_j |Z_j| from an independent stream
    oracle = np.abs(np.random.default_rng(d + 1).standard_normal((2000, d))).max(axis=1).mean()
    assert growth_C(X, 100) == pytest.approx(oracle / 10, rel=0.1)
    assert growth_C(X, 100) * 10 == pytest.approx(math.sqrt(2 * math.log(d)), rel=0.35)


def test_batch_csv_round_trip(tmp_path):
    batch = sample_L2(np.eye(2), 2, 20, 0)
    write_batch_csv(batch, tmp_path / "b.csv")
    law, vals = read_batch_csv(tmp_path / "b.csv")
    assert law == "L2" and np.array_equal(vals, batch.values)
    assert isinstance(batch, LimitSampleBatch)
