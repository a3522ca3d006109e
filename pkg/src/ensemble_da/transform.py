"""Per-dimension normal-score (Gaussian anamorphosis) transforms.

Each dimension gets a Gaussian-KDE estimate of its CDF, tabulated on a grid
and stored as knots in (x, z) space where z = Phi^-1(F(x)). Forward and
inverse maps are piecewise-linear interpolation between the knots, with
linear extrapolation in the tails, so the two are exact inverses of each
other up to rounding.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
from scipy.special import ndtr, ndtri

GRID_POINTS = 512
GRID_PAD = 4.0  # grid extends this many bandwidths past the sample range
KNOT_TOL = 1e-9  # minimum latent increment between knots


class DegenerateSampleError(ValueError):
    pass


def _has_spread(sample) -> np.ndarray:
    """Per-column check that the spread is not just rounding noise."""
    scale = np.maximum(np.abs(sample).max(axis=0), np.finfo(float).tiny)
    return sample.std(axis=0) > 1e-12 * scale


def silverman_bandwidth(sample) -> np.ndarray:
    """1.06 * std * m^(-1/5) along the first axis."""
    sample = np.asarray(sample, dtype=float)
    m = sample.shape[0]
    return 1.06 * sample.std(axis=0, ddof=1) * m ** (-0.2)


def kde_cdf(x, sample, bandwidth):
    """Gaussian-KDE CDF and survival function of a 1-d sample at points x."""
    u = (np.asarray(x, dtype=float)[..., None] - sample) / bandwidth
    return ndtr(u).mean(axis=-1), ndtr(-u).mean(axis=-1)


def latent_from_cdf(cdf, sf):
    # use the survival branch in the upper half so 1 - F never rounds to 0
    with np.errstate(divide="ignore"):
        return np.where(cdf < 0.5, ndtri(cdf), -ndtri(sf))


@dataclass(frozen=True)
class _Knots:
    x: np.ndarray
    z: np.ndarray
    lo_slope: float  # dz/dx below the first knot
    hi_slope: float  # dz/dx above the last knot

    def forward(self, v):
        v = np.asarray(v, dtype=float)
        out = np.interp(v, self.x, self.z)
        lo, hi = v < self.x[0], v > self.x[-1]
        out[lo] = self.z[0] + self.lo_slope * (v[lo] - self.x[0])
        out[hi] = self.z[-1] + self.hi_slope * (v[hi] - self.x[-1])
        return out

    def inverse(self, w):
        w = np.asarray(w, dtype=float)
        out = np.interp(w, self.z, self.x)
        lo, hi = w < self.z[0], w > self.z[-1]
        out[lo] = self.x[0] + (w[lo] - self.z[0]) / self.lo_slope
        out[hi] = self.x[-1] + (w[hi] - self.z[-1]) / self.hi_slope
        return out


def _tail_slope(x_end, z_end, knots_x, knots_z):
    """Secant slope from an end knot to the median knot (z = 0)."""
    z_mid = float(np.clip(0.0, knots_z[0], knots_z[-1]))
    if z_mid == z_end:
        z_mid = knots_z[-1] if z_end == knots_z[0] else knots_z[0]
    x_mid = np.interp(z_mid, knots_z, knots_x)
    return (z_end - z_mid) / (x_end - x_mid)


def binned_kde_cdf(sample, n_grid: int = GRID_POINTS):
    """Gaussian-KDE CDF of each column, tabulated on a uniform grid.

    The sample is linearly binned onto the grid and convolved (by FFT) with
    the kernel CDF sampled at grid offsets, which is exact up to the binning
    error O((spacing / bandwidth)^2). Returns ``(grid, cdf, bandwidth)`` with
    ``grid`` and ``cdf`` shaped ``(d, n_grid)``.
    """
    sample = np.asarray(sample, dtype=float)
    m, d = sample.shape
    h = silverman_bandwidth(sample)
    lo = sample.min(axis=0) - GRID_PAD * h
    hi = sample.max(axis=0) + GRID_PAD * h
    step = (hi - lo) / (n_grid - 1)
    grid = lo[:, None] + step[:, None] * np.arange(n_grid)

    pos = (sample - lo) / step
    idx = np.clip(np.floor(pos).astype(int), 0, n_grid - 2)
    frac = pos - idx
    cols = np.arange(d) * n_grid
    weights = (np.bincount((idx + cols).ravel(), (1.0 - frac).ravel(), d * n_grid)
               + np.bincount((idx + 1 + cols).ravel(), frac.ravel(), d * n_grid))
    weights = weights.reshape(d, n_grid) / m

    offsets = np.arange(-(n_grid - 1), n_grid)
    kernel = ndtr(offsets[None, :] * (step / h)[:, None])
    n_fft = sfft.next_fast_len(3 * n_grid - 2)
    conv = sfft.irfft(sfft.rfft(weights, n_fft) * sfft.rfft(kernel, n_fft), n_fft)
    cdf = conv[:, n_grid - 1:2 * n_grid - 1]
    return grid, cdf, h


def _knots_from_cdf(grid, cdf, m: int) -> _Knots:
    z = latent_from_cdf(cdf, 1.0 - cdf)
    # Beyond about 1/(2m) in either tail the KDE shape is set by a single
    # extreme point; tabulate only the resolved part and extrapolate the rest.
    z_max = -float(ndtri(0.5 / m))
    keep = np.isfinite(z) & (np.abs(z) <= z_max)
    grid, z = grid[keep], z[keep]
    # Drop plateaus (far-apart clusters, FFT rounding) so z strictly increases.
    # On a nondecreasing sequence, a step of at least KNOT_TOL from the
    # predecessor also separates each kept knot from the previous kept one.
    z = np.maximum.accumulate(z)
    strict = np.concatenate(([True], np.diff(z) > KNOT_TOL))
    grid, z = grid[strict], z[strict]
    if grid.size < 2:
        raise DegenerateSampleError("CDF estimate has fewer than two distinct knots")
    lo = _tail_slope(grid[0], z[0], grid, z)
    hi = _tail_slope(grid[-1], z[-1], grid, z)
    return _Knots(grid, z, lo, hi)


def _check_sample(sample):
    sample = np.asarray(sample, dtype=float)
    if sample.shape[0] < 2:
        raise ValueError("need at least two sample points")
    if not np.all(np.isfinite(sample)):
        raise ValueError("sample contains non-finite values")
    return sample


def fit_1d(sample, n_grid: int = GRID_POINTS) -> _Knots:
    sample = _check_sample(np.asarray(sample, dtype=float).ravel())
    if not _has_spread(sample[:, None])[0]:
        raise DegenerateSampleError("sample has zero spread")
    grid, cdf, _ = binned_kde_cdf(sample[:, None], n_grid)
    return _knots_from_cdf(grid[0], cdf[0], sample.size)


class NormalScoreMap:
    """Independent normal-score transforms for each column of a sample."""

    def __init__(self, knots: list):
        self.knots = knots  # None marks an identity (degenerate) dimension

    @classmethod
    def fit(cls, sample, n_grid: int = GRID_POINTS) -> "NormalScoreMap":
        sample = np.asarray(sample, dtype=float)
        if sample.ndim == 1:
            sample = sample[:, None]
        sample = _check_sample(sample)
        m, d = sample.shape
        knots = [None] * d
        good = np.flatnonzero(_has_spread(sample))
        if good.size:
            grid, cdf, _ = binned_kde_cdf(sample[:, good], n_grid)
            for row, i in enumerate(good):
                try:
                    knots[i] = _knots_from_cdf(grid[row], cdf[row], m)
                except DegenerateSampleError:
                    pass
        for i in np.flatnonzero([k is None for k in knots]):
            warnings.warn(f"dimension {i} is degenerate; using identity transform",
                          RuntimeWarning, stacklevel=2)
        return cls(knots)

    @property
    def dim(self) -> int:
        return len(self.knots)

    def _apply(self, values, inverse: bool):
        values = np.asarray(values, dtype=float)
        squeeze = values.ndim == 1
        v = np.atleast_2d(values)
        if v.shape[-1] != self.dim:
            raise ValueError(f"expected last axis {self.dim}, got {v.shape[-1]}")
        out = np.empty_like(v)
        for i, k in enumerate(self.knots):
            if k is None:
                out[:, i] = v[:, i]
            else:
                out[:, i] = k.inverse(v[:, i]) if inverse else k.forward(v[:, i])
        return out[0] if squeeze else out

    def forward(self, x):
        return self._apply(x, inverse=False)

    def inverse(self, z):
        return self._apply(z, inverse=True)


def fit(sample, n_grid: int = GRID_POINTS) -> NormalScoreMap:
    return NormalScoreMap.fit(sample, n_grid)
