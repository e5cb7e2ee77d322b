"""Unit tests for gp_rules.py"""

import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import gp_rules
from channel import (
    Band,
    BandConfig,
    DualBandConfig,
    PathLossModel,
    ShadowingModel,
    build_joint_covariance,
    path_loss,
    rate,
    sample_shadowing,
    snr,
)
from errors import DomainError, FitError
from gp_rules import (
    GpRuleParams,
    History,
    approx_decide,
    approx_moments,
    approx_success_prob,
    condition_gaussian,
    exact_success_prob,
    fit_pathloss_two_segment,
    fit_shadowing_params,
    map_decide,
    q_function,
    q_inverse,
    shadowing_residuals,
    tbba_decide,
    tbba_threshold_decide,
    v_threshold,
)


def make_params(rho=0.75, nu=1.9, boost_db=0.0, horizon=4, window=5):
    dual = DualBandConfig(c=BandConfig(Band.C, 2.5e9, 10e6, 15.0 + boost_db),
                          m=BandConfig(Band.M, 28e9, 100e6, 22.0 + boost_db))
    return GpRuleParams(
        dual_band=dual,
        pl_c=PathLossModel.free_space(2.5e9),
        pl_m=PathLossModel.free_space(28e9),
        shadow=ShadowingModel(sigma_c=5.0, sigma_m=7.0, rho=rho, dcor_c=25.0, dcor_m=24.0, nu=nu),
        horizon=horizon,
        window=window,
    )


def random_walk(rng, n, step=5.0):
    start = rng.uniform(40.0, 200.0, size=2)
    headings = rng.uniform(-math.pi, math.pi, size=n - 1)
    moves = step * np.column_stack([np.cos(headings), np.sin(headings)])
    return np.vstack([start, start + np.cumsum(moves, axis=0)])


def random_history(rng, params):
    """Positions for frames t-Q..t+U and one joint draw; returns (History, positions, values)."""
    n = params.window + 1 + params.horizon
    positions = random_walk(rng, n)
    draw = sample_shadowing(build_joint_covariance(params.shadow, positions), int(rng.integers(2 ** 31)), positions)
    history = History.from_sequence(positions, draw.s_c, draw.s_m, params.window, params.window, params.horizon)
    return history, positions, draw


@pytest.fixture
def params():
    return make_params()


# ----------------- Gaussian utilities -----------------

def test_conditioning_matches_closed_form():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        sigma_c, sigma_m = rng.uniform(1.0, 10.0, size=2)
        rho = rng.uniform(-0.99, 0.99)
        model = ShadowingModel(sigma_c=sigma_c, sigma_m=sigma_m, rho=rho)
        cov = build_joint_covariance(model, np.array([[10.0, 0.0]]))
        s_c = rng.normal(0.0, sigma_c)
        result = condition_gaussian(cov, [0], [s_c], 1)
        worst = max(worst, abs(result.mean - rho * sigma_m / sigma_c * s_c),
                    abs(result.variance - (1 - rho ** 2) * sigma_m ** 2))
    assert worst < 1e-10


def test_conditioning_without_observations():
    cov = np.array([[4.0, 1.0], [1.0, 9.0]])
    result = condition_gaussian(cov, [], [], 1)
    assert result.mean == 0.0 and result.variance == 9.0


def test_conditioning_rejects_bad_indices():
    cov = np.eye(2)
    with pytest.raises(DomainError):
        condition_gaussian(cov, [0, 1], [1.0], 1)
    with pytest.raises(DomainError):
        condition_gaussian(cov, [5], [1.0], 1)


def test_q_inverse():
    assert q_inverse(0.5) == 0.0
    assert q_function(q_inverse(0.1)) == pytest.approx(0.1)
    with pytest.raises(DomainError):
        q_inverse(1.0)


def test_argmax_equals_half_threshold():
    """Picking the more probable band is the same as thresholding at 0.5."""
    rng = np.random.default_rng(1)
    p = rng.random(10_000)
    argmax = (p >= 1.0 - p).astype(int)
    np.testing.assert_array_equal(map_decide(p, 0.5), argmax)
    assert map_decide(0.5) == 1
    with pytest.raises(DomainError):
        map_decide(1.2)


# ----------------- One-shot rule -----------------

def test_v_threshold_balances_rates(params):
    d, s_c = 120.0, 2.0
    s_m = float(v_threshold(s_c, params, d))
    r_c = rate(params.dual_band.c, snr(params.dual_band.c, path_loss(params.pl_c, d), s_c))
    r_m = rate(params.dual_band.m, snr(params.dual_band.m, path_loss(params.pl_m, d), s_m))
    assert r_m == pytest.approx(r_c, rel=1e-9)


def test_v_threshold_identity_for_symmetric_bands():
    band = BandConfig(Band.C, 2.5e9, 10e6, 15.0)
    twin = BandConfig(Band.M, 2.5e9, 10e6, 15.0)
    pl = PathLossModel.free_space(2.5e9)
    params = GpRuleParams(dual_band=DualBandConfig(c=band, m=twin), pl_c=pl, pl_m=pl, shadow=ShadowingModel())
    s = np.linspace(-20.0, 20.0, 41)
    for d in (10.0, 100.0, 300.0):
        np.testing.assert_allclose(v_threshold(s, params, d), s, atol=1e-9)


def test_tbba_probability_formula(params):
    d, s_c = 150.0, 3.0
    out = tbba_decide(s_c, params, d)
    v = v_threshold(s_c, params, d)
    expected = q_function((v - 0.75 * 7.0 / 5.0 * s_c) / (7.0 * math.sqrt(1 - 0.75 ** 2)))
    assert float(out.probability) == pytest.approx(float(expected))
    assert int(out.decision) == int(float(expected) >= 0.5)


@given(s_c=st.floats(min_value=-15.0, max_value=15.0), d=st.floats(min_value=5.0, max_value=350.0))
@settings(max_examples=200, deadline=None)
def test_tbba_threshold_form_agrees(s_c, d):
    params = make_params()
    prob_form = int(tbba_decide(s_c, params, d).decision)
    thr_form = tbba_threshold_decide(s_c, params, d)
    v = float(v_threshold(s_c, params, d))
    # Skip knife-edge cases where both forms sit on the boundary
    if abs(0.75 * 7.0 / 5.0 * s_c - v) > 1e-9:
        assert prob_form == thr_form


def test_tbba_rho_zero_uses_prior(caplog):
    params = make_params(rho=0.0)
    with caplog.at_level(logging.WARNING):
        out = tbba_decide(np.array([-5.0, 5.0]), params, np.array([100.0, 100.0]))
    assert out.degenerate
    assert "rho=0" in caplog.text
    with pytest.raises(DomainError):
        tbba_threshold_decide(1.0, params, 100.0)


# ----------------- Sequential rules -----------------

def test_history_from_sequence_window():
    positions = np.arange(20, dtype=float).reshape(10, 2) + 50.0
    s = np.arange(10, dtype=float)
    h = History.from_sequence(positions, s, -s, t=6, window=3, horizon=2)
    np.testing.assert_array_equal(h.s_c, [3, 4, 5, 6])
    np.testing.assert_array_equal(h.target_position, positions[8])
    assert h.values.size == 8


def monte_carlo_success(h, positions, params, n_samples, seed):
    """Direct estimate of P(R^m >= R^c at t+U) from joint conditional draws of both bands."""
    q, u = params.window, params.horizon
    window_positions = np.vstack([positions[: q + 1], positions[q + u]])
    cov = build_joint_covariance(params.shadow, window_positions)
    k = q + 2
    obs = np.r_[np.arange(q + 1), k + np.arange(q + 1)]
    tgt = np.array([q + 1, k + q + 1])
    s_oo = cov[np.ix_(obs, obs)]
    s_to = cov[np.ix_(tgt, obs)]
    mean = s_to @ np.linalg.solve(s_oo, h.values)
    cond = cov[np.ix_(tgt, tgt)] - s_to @ np.linalg.solve(s_oo, s_to.T)
    samples = np.random.default_rng(seed).multivariate_normal(mean, cond, size=n_samples)
    d = params.distance(h.target_position)
    r_c = rate(params.dual_band.c, snr(params.dual_band.c, path_loss(params.pl_c, d), samples[:, 0]))
    r_m = rate(params.dual_band.m, snr(params.dual_band.m, path_loss(params.pl_m, d), samples[:, 1]))
    return float(np.mean(r_m >= r_c))


def test_exact_matches_monte_carlo():
    """Quadrature against a direct Monte-Carlo estimate of the conditional success probability."""
    params = make_params(nu=1.0)
    rng = np.random.default_rng(7)
    for i in range(6):
        h, positions, _ = random_history(rng, params)
        p_mc = monte_carlo_success(h, positions, params, 400_000, seed=11 + i)
        assert exact_success_prob(h, params) == pytest.approx(p_mc, abs=5e-3)


@pytest.mark.slow
def test_exact_matches_monte_carlo_full():
    params = make_params(nu=1.0)
    rng = np.random.default_rng(17)
    worst = 0.0
    for i in range(100):
        h, positions, _ = random_history(rng, params)
        p_mc = monte_carlo_success(h, positions, params, 1_000_000, seed=1000 + i)
        worst = max(worst, abs(exact_success_prob(h, params) - p_mc))
    assert worst < 2e-3


def test_success_probabilities_are_probabilities(params):
    rng = np.random.default_rng(3)
    for _ in range(20):
        h, _, _ = random_history(rng, params)
        assert 0.0 <= exact_success_prob(h, params) <= 1.0
        p = approx_success_prob(h, params)
        assert 0.0 <= p <= 1.0
        assert approx_decide(h, params) == int(approx_moments(h, params).mean >= 0.0)
        assert approx_decide(h, params) == int(p >= 0.5)


def high_snr_agreement(n, seed):
    params = make_params(boost_db=40.0)
    rng = np.random.default_rng(seed)
    agree = 0
    for _ in range(n):
        h, _, _ = random_history(rng, params)
        agree += int(approx_decide(h, params) == map_decide(exact_success_prob(h, params)))
    return agree / n


def test_approx_agrees_with_exact_at_high_snr():
    assert high_snr_agreement(300, seed=5) >= 0.99


@pytest.mark.slow
def test_approx_agrees_with_exact_at_high_snr_full():
    assert high_snr_agreement(10_000, seed=6) >= 0.99


def test_weights_cached_by_relative_geometry(params):
    gp_rules._weights_cache.clear()
    positions = np.array([[50.0, 50.0], [55.0, 50.0], [60.0, 50.0]])
    s = np.array([1.0, 0.5])
    a = History(positions[:2], s, s, positions[2])
    b = History(positions[:2] + 100.0, s, s, positions[2] + 100.0)
    approx_moments(a, params)
    approx_moments(b, params)
    assert len(gp_rules._weights_cache) == 1


def test_empty_history_uses_prior(params):
    h = History(np.empty((0, 2)), np.empty(0), np.empty(0), np.array([80.0, 0.0]))
    moments = approx_moments(h, params)
    assert moments.variance > 0
    assert 0.0 <= exact_success_prob(h, params) <= 1.0


def test_params_validation():
    with pytest.raises(DomainError):
        make_params(horizon=-1)
    with pytest.raises(DomainError):
        GpRuleParams(make_params().dual_band, PathLossModel.free_space(2.5e9), PathLossModel.free_space(28e9),
                     ShadowingModel(), gamma_t=1.5)


# ----------------- Fitting -----------------

def test_pathloss_fit_recovers_noiseless_model():
    truth = PathLossModel(intercept_db=42.0, break_dist=50.0, post_break_exponent=3.5, pre_break_exponent=2.0)
    d = np.geomspace(2.0, 400.0, 300)
    rx = 20.0 - path_loss(truth, d)
    fit = fit_pathloss_two_segment(d, rx, 20.0)
    assert fit.intercept_db == pytest.approx(42.0, abs=1e-3)
    assert fit.break_dist == pytest.approx(50.0, rel=1e-3)
    assert fit.post_break_exponent == pytest.approx(3.5, abs=1e-3)


def test_pathloss_fit_both_slopes():
    truth = PathLossModel(intercept_db=35.0, break_dist=80.0, post_break_exponent=4.0, pre_break_exponent=2.6)
    d = np.geomspace(2.0, 400.0, 300)
    fit = fit_pathloss_two_segment(d, 10.0 - path_loss(truth, d), 10.0, fit_pre_exponent=True)
    assert fit.pre_break_exponent == pytest.approx(2.6, abs=1e-3)
    assert fit.post_break_exponent == pytest.approx(4.0, abs=1e-3)
    assert fit.break_dist == pytest.approx(80.0, rel=1e-3)


def test_pathloss_fit_needs_data():
    with pytest.raises(FitError):
        fit_pathloss_two_segment([10.0, 20.0], [-50.0, -60.0], 0.0)
    with pytest.raises(FitError):
        fit_pathloss_two_segment(np.full(10, 30.0), np.full(10, -60.0), 0.0)


def test_shadowing_residuals_invert_snr(params):
    band = params.dual_band.c
    d = np.array([20.0, 80.0, 300.0])
    s = np.array([-3.0, 0.0, 4.5])
    observed = snr(band, path_loss(params.pl_c, d), s)
    np.testing.assert_allclose(shadowing_residuals(d, observed, band, params.pl_c), s)


def test_shadowing_fit_recovers_parameters():
    truth = ShadowingModel(sigma_c=5.0, sigma_m=7.0, rho=0.75, dcor_c=25.0, dcor_m=24.0, nu=1.9)
    rng = np.random.default_rng(2)
    positions, res_c, res_m, groups = [], [], [], []
    for g in range(6):
        pts = rng.uniform(0.0, 250.0, size=(600, 2))
        draw = sample_shadowing(build_joint_covariance(truth, pts), seed=100 + g, positions=pts)
        positions.append(pts)
        res_c.append(draw.s_c)
        res_m.append(draw.s_m)
        groups.append(np.full(600, g))
    fit = fit_shadowing_params(np.vstack(positions), np.concatenate(res_c), np.concatenate(res_m),
                               groups=np.concatenate(groups), nu=1.9)
    assert fit.sigma_c == pytest.approx(5.0, rel=0.15)
    assert fit.sigma_m == pytest.approx(7.0, rel=0.15)
    assert fit.rho == pytest.approx(0.75, abs=0.08)
    assert fit.dcor_c == pytest.approx(25.0, rel=0.35)
    assert fit.dcor_m == pytest.approx(24.0, rel=0.35)


def test_shadowing_fit_needs_samples():
    with pytest.raises(FitError):
        fit_shadowing_params(np.zeros((10, 2)), np.zeros(10), np.zeros(10))


if __name__ == '__main__':
    pytest.main([__file__])
