"""Smoothed exploration noise: autocorrelation oracle, variance, determinism."""

import numpy as np
import pytest

from trajrl.trajectory import NoiseMatrix, generate_smoothed_noise


def empirical_autocorrelation(column, lag):
    return float(np.corrcoef(column[:-lag], column[lag:])[0, 1])


def test_sigma_zero_returns_raw_seeded_draws():
    nm = generate_smoothed_noise(5, 2, 0.0, seed=7)
    raw = np.random.default_rng(7).standard_normal((5, 2))
    assert np.array_equal(nm.values, raw)


def test_sigma_zero_lag1_autocorrelation_near_zero():
    nm = generate_smoothed_noise(100_000, 1, 0.0, seed=3)
    assert abs(empirical_autocorrelation(nm.values[:, 0], 1)) < 0.02


@pytest.mark.parametrize("lag", [1, 2, 3, 4])
def test_smoothed_autocorrelation_matches_gaussian_kernel_theory(lag):
    # The autocorrelation of white noise filtered by a Gaussian kernel of
    # std sigma is exp(-lag^2 / (4 sigma^2)); at sigma=2, lag-1 is 0.9394.
    nm = generate_smoothed_noise(100_000, 2, 2.0, seed=11)
    expected = np.exp(-(lag**2) / 16.0)
    for j in range(2):
        assert empirical_autocorrelation(nm.values[:, j], lag) == pytest.approx(
            expected, abs=0.01
        )


def test_unit_variance_after_renormalization():
    nm = generate_smoothed_noise(100_000, 3, 2.0, seed=5)
    assert np.all(np.abs(nm.values.var(axis=0) - 1.0) < 0.05)


def test_columns_independent():
    nm = generate_smoothed_noise(100_000, 2, 2.0, seed=19)
    rho = np.corrcoef(nm.values[:, 0], nm.values[:, 1])[0, 1]
    assert abs(rho) < 0.02


def test_determinism_bit_identical():
    a = generate_smoothed_noise(512, 4, 2.0, seed=42)
    b = generate_smoothed_noise(512, 4, 2.0, seed=42)
    assert np.array_equal(a.values, b.values)


def test_different_seeds_differ():
    a = generate_smoothed_noise(64, 1, 2.0, seed=1)
    b = generate_smoothed_noise(64, 1, 2.0, seed=2)
    assert not np.array_equal(a.values, b.values)


@pytest.mark.parametrize("T,d_u", [(0, 2), (5, 0), (-1, 1)])
def test_invalid_dimensions_rejected(T, d_u):
    with pytest.raises(ValueError):
        generate_smoothed_noise(T, d_u, 2.0, seed=0)


def test_negative_sigma_rejected():
    with pytest.raises(ValueError):
        generate_smoothed_noise(10, 1, -0.5, seed=0)


def test_scaled_preserves_metadata():
    nm = generate_smoothed_noise(10, 2, 2.0, seed=0)
    scaled = nm.scaled(0.5)
    assert isinstance(scaled, NoiseMatrix)
    assert scaled.sigma == nm.sigma and scaled.seed == nm.seed
    assert np.allclose(scaled.values, 0.5 * nm.values)


def test_values_immutable():
    nm = generate_smoothed_noise(10, 2, 2.0, seed=0)
    with pytest.raises(ValueError):
        nm.values[0, 0] = 99.0
