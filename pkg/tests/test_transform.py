import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from ensemble_da.transform import (DegenerateSampleError, NormalScoreMap, binned_kde_cdf,
                                   fit, fit_1d, kde_cdf, silverman_bandwidth)


@pytest.fixture(scope="module")
def gauss_sample():
    return np.random.default_rng(11).standard_normal(1000)


@pytest.fixture(scope="module")
def gauss_map(gauss_sample):
    return fit(gauss_sample)


def test_two_point_sample_is_symmetric():
    sample = np.array([0.0, 1.0])
    cdf, _ = kde_cdf(0.5, sample, silverman_bandwidth(sample))
    assert cdf == pytest.approx(0.5, abs=1e-15)
    assert abs(fit(sample).forward(np.array([0.5]))[0]) < 1e-12


def test_binned_cdf_matches_direct_kde():
    rng = np.random.default_rng(12)
    for sample in (rng.standard_normal(100), rng.exponential(size=300),
                   np.concatenate([rng.normal(-5, 1, 50), rng.normal(5, 1, 50)])):
        grid, cdf, h = binned_kde_cdf(sample[:, None])
        exact, _ = kde_cdf(grid[0], sample, h[0])
        assert np.max(np.abs(cdf[0] - exact)) < 1e-4


def test_monte_carlo_cdf_at_zero():
    sample = np.random.default_rng(13).standard_normal(10 ** 4)
    cdf, _ = kde_cdf(0.0, sample, silverman_bandwidth(sample))
    assert 0.48 <= cdf <= 0.52
    assert stats.norm.ppf(0.48) <= fit(sample).forward(np.array([0.0]))[0] <= stats.norm.ppf(0.52)


def test_fitted_cdf_nondecreasing(gauss_sample):
    grid, cdf, h = binned_kde_cdf(gauss_sample[:, None])
    exact, _ = kde_cdf(grid[0], gauss_sample, h[0])
    assert np.all(np.diff(exact) >= 0)
    assert np.all(np.diff(gauss_map_knots(gauss_sample).z) > 0)


def gauss_map_knots(sample):
    return fit_1d(sample)


def test_median_maps_to_zero(gauss_map):
    median = gauss_map.inverse(np.array([0.0]))
    assert abs(gauss_map.forward(median)[0]) < 1e-6


def test_ks_normality(gauss_map, gauss_sample):
    z = gauss_map.forward(gauss_sample[:, None])[:, 0]
    assert stats.kstest(z, "norm").statistic <= 0.06
    assert abs(z.mean()) <= 0.05
    assert abs(z.std(ddof=1) - 1) <= 0.05


def test_round_trip_in_range(gauss_map, gauss_sample):
    x = np.linspace(gauss_sample.min(), gauss_sample.max(), 2001)[:, None]
    assert np.max(np.abs(gauss_map.inverse(gauss_map.forward(x)) - x)) <= 1e-6


def test_round_trip_one_bandwidth_outside(gauss_map, gauss_sample):
    h = silverman_bandwidth(gauss_sample)
    x = np.concatenate([np.linspace(gauss_sample.min() - h, gauss_sample.min(), 50),
                        np.linspace(gauss_sample.max(), gauss_sample.max() + h, 50)])[:, None]
    assert np.max(np.abs(gauss_map.inverse(gauss_map.forward(x)) - x)) <= 1e-3


def test_inverse_round_trip_latent(gauss_map):
    z = np.linspace(-8, 8, 321)[:, None]
    np.testing.assert_allclose(gauss_map.forward(gauss_map.inverse(z)), z, atol=1e-9)


def test_extreme_latent_tails_track_gaussian_quantiles():
    m = fit(np.random.default_rng(14).standard_normal(10 ** 4))
    z = np.linspace(-6, 6, 121)[:, None]
    x = m.inverse(z)[:, 0]
    assert np.all(np.isfinite(x)) and np.all(np.diff(x) > 0)
    for end in (-6.0, 6.0):
        assert m.inverse(np.array([end]))[0] == pytest.approx(end, rel=0.15)


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["normal", "exponential", "pareto"]))
def test_strictly_monotone(seed, law):
    rng = np.random.default_rng(seed)
    sample = {"normal": rng.standard_normal, "exponential": lambda n: rng.exponential(size=n),
              "pareto": lambda n: 2 + 2 * ((1 - rng.random(n)) ** -0.5 - 1)}[law](100)
    m = fit(sample)
    x = np.sort(np.concatenate([np.linspace(sample.min() - 5, sample.max() + 5, 400), sample]))
    x = np.unique(x)[:, None]
    assert np.all(np.diff(m.forward(x)[:, 0]) > 0)
    z = np.linspace(-7, 7, 400)[:, None]
    assert np.all(np.diff(m.inverse(z)[:, 0]) > 0)


@given(st.floats(0.1, 50.0), st.floats(-100.0, 100.0), st.integers(0, 2 ** 32 - 1))
def test_affine_equivariance(scale, shift, seed):
    sample = np.random.default_rng(seed).gamma(2.0, size=200)
    probe = np.linspace(sample.min() - 1, sample.max() + 1, 50)[:, None]
    base = fit(sample).forward(probe)
    moved = fit(scale * sample + shift).forward(scale * probe + shift)
    np.testing.assert_allclose(moved, base, atol=1e-6)


def test_per_dimension_fit_matches_single_columns():
    sample = np.random.default_rng(15).normal(size=(80, 3)) * [1, 10, 0.1]
    joint = fit(sample)
    probe = sample[:5]
    for i in range(3):
        np.testing.assert_allclose(joint.forward(probe)[:, i],
                                   fit(sample[:, i]).forward(probe[:, i:i + 1])[:, 0])


def test_degenerate_sample_raises():
    with pytest.raises(DegenerateSampleError):
        fit_1d(np.full(10, 3.0))


def test_degenerate_column_falls_back_to_identity():
    sample = np.column_stack([np.random.default_rng(16).normal(size=30), np.full(30, 2.0)])
    with pytest.warns(RuntimeWarning, match="degenerate"):
        m = NormalScoreMap.fit(sample)
    probe = np.array([[0.1, 7.0]])
    assert m.forward(probe)[0, 1] == 7.0 and m.inverse(probe)[0, 1] == 7.0


def test_needs_two_points():
    with pytest.raises(ValueError):
        fit(np.array([1.0]))


def test_dimension_mismatch():
    m = fit(np.random.default_rng(17).normal(size=(20, 2)))
    with pytest.raises(ValueError):
        m.forward(np.zeros((4, 3)))
