"""Unit tests for channel.py"""

import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from channel import (
    Band,
    BandConfig,
    PathLossModel,
    ShadowingModel,
    build_joint_covariance,
    capped_rate,
    cholesky_with_jitter,
    covariance,
    gamma_prime,
    path_loss,
    rate,
    sample_shadowing,
    sample_shadowing_batch,
    snr,
    spectral_efficiency,
)
from errors import DomainError, NumericalError


@pytest.fixture
def band_c():
    return BandConfig(Band.C, 2.5e9, 10e6, 15.0)


@pytest.fixture
def band_m():
    return BandConfig(Band.M, 28e9, 100e6, 22.0)


@pytest.fixture
def shadow():
    return ShadowingModel(sigma_c=5.0, sigma_m=7.0, rho=0.75, dcor_c=25.0, dcor_m=24.0, nu=1.9)


# ----------------- Link budget -----------------

def test_noise_power(band_c, band_m):
    assert band_c.noise_power == pytest.approx(-104.0)
    assert band_m.noise_power == pytest.approx(-94.0)


def test_band_validation():
    with pytest.raises(DomainError):
        BandConfig(Band.C, 2.5e9, 0.0, 15.0)
    with pytest.raises(DomainError):
        BandConfig(Band.M, -1.0, 1e6, 15.0)


def test_free_space_intercept():
    model = PathLossModel.free_space(28e9)
    assert model.intercept_db == pytest.approx(61.39, abs=0.01)
    assert path_loss(model, 1.0) == pytest.approx(model.intercept_db)


def test_path_loss_two_segments():
    model = PathLossModel(intercept_db=40.0, break_dist=50.0, post_break_exponent=4.0, pre_break_exponent=2.0)
    at_break = 40.0 + 20.0 * math.log10(50.0)
    assert path_loss(model, 50.0) == pytest.approx(at_break)
    assert path_loss(model, 10.0) == pytest.approx(40.0 + 20.0)
    assert path_loss(model, 500.0) == pytest.approx(at_break + 40.0)
    d = np.array([1.0, 5.0, 49.9, 50.0, 50.1, 400.0])
    assert np.all(np.diff(path_loss(model, d)) > 0)


def test_path_loss_rejects_short_distance():
    model = PathLossModel.free_space(2.5e9)
    with pytest.raises(DomainError):
        path_loss(model, 0.5)
    with pytest.raises(DomainError):
        path_loss(model, np.array([2.0, 0.1]))


def test_snr_and_gamma_prime_agree(band_m):
    pl = 110.0
    assert snr(band_m, pl, 0.0) == pytest.approx(22.0 - 110.0 + 94.0)
    assert 10 * math.log10(gamma_prime(band_m, pl)) == pytest.approx(snr(band_m, pl, 0.0))
    assert snr(band_m, pl, 3.0) - snr(band_m, pl, 0.0) == pytest.approx(3.0)


def test_rate_and_cap(band_m):
    assert rate(band_m, 0.0) == pytest.approx(100e6)
    high = 40.0
    assert rate(band_m, high) > 8 * 100e6
    assert capped_rate(band_m, high) == pytest.approx(8 * 100e6)
    assert capped_rate(band_m, 0.0) == pytest.approx(rate(band_m, 0.0))


def test_spectral_efficiency_low_snr():
    x = 1e-12
    assert spectral_efficiency(10 * math.log10(x)) == pytest.approx(x / math.log(2.0), rel=1e-6)


# ----------------- Shadowing -----------------

def test_covariance_at_zero_lag(shadow):
    assert covariance(shadow, Band.C, Band.C, 0.0) == pytest.approx(25.0)
    assert covariance(shadow, Band.M, Band.M, 0.0) == pytest.approx(49.0)
    assert covariance(shadow, Band.C, Band.M, 0.0) == pytest.approx(0.75 * 35.0)


def test_cross_band_exponent_averages(shadow):
    delta = 30.0
    expected = 0.75 * 35.0 * math.exp(-0.5 * ((delta / 25.0) ** 1.9 + (delta / 24.0) ** 1.9))
    assert covariance(shadow, Band.C, Band.M, delta) == pytest.approx(expected)


@given(delta=st.floats(min_value=0.0, max_value=500.0), extra=st.floats(min_value=0.01, max_value=100.0))
@settings(max_examples=50, deadline=None)
def test_covariance_symmetric_and_decreasing(delta, extra):
    model = ShadowingModel()
    assert covariance(model, Band.C, Band.M, delta) == pytest.approx(covariance(model, Band.M, Band.C, delta))
    assert covariance(model, Band.C, Band.C, delta + extra) <= covariance(model, Band.C, Band.C, delta) + 1e-12


def test_shadowing_model_validation():
    with pytest.raises(DomainError):
        ShadowingModel(rho=1.5)
    with pytest.raises(DomainError):
        ShadowingModel(nu=2.5)
    with pytest.raises(DomainError):
        ShadowingModel(dcor_c=0.0)
    with pytest.raises(DomainError):
        ShadowingModel(sigma_c=0.0)
    with pytest.raises(DomainError):
        ShadowingModel(sigma_m=-1.0)


def test_joint_covariance_layout(shadow):
    positions = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 30.0]])
    cov = build_joint_covariance(shadow, positions)
    assert cov.shape == (6, 6)
    np.testing.assert_allclose(cov, cov.T)
    assert cov[0, 3] == pytest.approx(0.75 * 35.0)
    assert cov[3, 3] == pytest.approx(49.0)
    assert np.linalg.eigvalsh(cov).min() > 0


def test_joint_covariance_needs_positions(shadow):
    with pytest.raises(DomainError):
        build_joint_covariance(shadow, np.empty((0, 2)))


def test_sampler_fidelity(shadow):
    """Empirical covariance of many joint draws matches the model."""
    positions = np.array([[0.0, 0.0], [5.0, 0.0], [10.0, 5.0], [20.0, 20.0], [40.0, 0.0], [0.0, 60.0]])
    cov = build_joint_covariance(shadow, positions)
    draws = sample_shadowing_batch(cov, 100_000, seed=3)
    empirical = np.cov(draws, rowvar=False)
    scale = np.sqrt(np.outer(np.diag(cov), np.diag(cov)))
    assert np.max(np.abs(empirical - cov) / scale) < 0.05
    np.testing.assert_allclose(np.diag(empirical), np.diag(cov), rtol=0.05)


def test_sample_shadowing_deterministic(shadow):
    positions = np.array([[0.0, 0.0], [5.0, 5.0]])
    cov = build_joint_covariance(shadow, positions)
    a = sample_shadowing(cov, seed=42, positions=positions)
    b = sample_shadowing(cov, seed=42, positions=positions)
    c = sample_shadowing(cov, seed=43, positions=positions)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert a.s_c.shape == (2,) and a.s_m.shape == (2,)


def test_single_position_draw(shadow):
    cov = build_joint_covariance(shadow, np.array([[3.0, 4.0]]))
    draw = sample_shadowing(cov, seed=0)
    assert draw.values.shape == (2, 1)


def test_jitter_on_duplicate_positions(shadow, caplog):
    positions = np.array([[0.0, 0.0], [0.0, 0.0], [5.0, 0.0]])
    cov = build_joint_covariance(shadow, positions)
    with caplog.at_level(logging.WARNING):
        factor = cholesky_with_jitter(cov)
    assert factor.shape == cov.shape
    np.testing.assert_allclose(factor @ factor.T, cov, atol=1e-4 * 49.0)
    assert "jitter" in caplog.text


def test_factorization_failure_is_diagnosed():
    bad = np.array([[1.0, 0.0], [0.0, -5.0]])
    with pytest.raises(NumericalError) as excinfo:
        cholesky_with_jitter(bad)
    assert excinfo.value.min_eigenvalue == pytest.approx(-5.0)


if __name__ == '__main__':
    pytest.main([__file__])
