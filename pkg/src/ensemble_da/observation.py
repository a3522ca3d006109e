"""Observation operators: an element-wise map plus additive noise."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAPS = ("linear", "cubic")
NOISE_KINDS = ("gaussian", "exponential", "bimodal", "pareto", "none")


@dataclass(frozen=True)
class NoiseDistribution:
    """Additive noise law.

    Parameters by kind:
      gaussian     mean, std
      exponential  mean
      bimodal      mode_offset, component_std (equal-weight mixture at +-offset)
      pareto       shape k, scale sigma, location theta (generalized Pareto)
      none         zero noise, for tests and perfect-observation runs
    """

    kind: str = "gaussian"
    mean: float = 0.0
    std: float = 1.0
    mode_offset: float = 5.0
    component_std: float = 1.0
    shape: float = 0.5
    scale: float = 1.0
    location: float = 2.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "gaussian" and not self.std > 0:
            raise ValueError("gaussian std must be > 0")
        if self.kind == "exponential" and not self.mean > 0:
            raise ValueError("exponential mean must be > 0")
        if self.kind == "bimodal" and not self.component_std > 0:
            raise ValueError("bimodal component_std must be > 0")
        if self.kind == "pareto" and not self.scale > 0:
            raise ValueError("pareto scale must be > 0")

    @classmethod
    def gaussian(cls, mean=0.0, std=1.0):
        return cls("gaussian", mean=mean, std=std)

    @classmethod
    def exponential(cls, mean=1.0):
        return cls("exponential", mean=mean)

    @classmethod
    def bimodal(cls, mode_offset=5.0, component_std=1.0):
        return cls("bimodal", mode_offset=mode_offset, component_std=component_std)

    @classmethod
    def pareto(cls, shape=0.5, scale=1.0, location=2.0):
        return cls("pareto", shape=shape, scale=scale, location=location)

    @classmethod
    def zero(cls):
        return cls("none")

    @property
    def variance(self) -> float:
        """Nominal variance, used as R when a Gaussian update needs one."""
        if self.kind == "gaussian":
            return self.std ** 2
        if self.kind == "exponential":
            return self.mean ** 2
        if self.kind == "bimodal":
            return self.mode_offset ** 2 + self.component_std ** 2
        if self.kind == "pareto":
            k, s = self.shape, self.scale
            return s * s / ((1 - k) ** 2 * (1 - 2 * k)) if k < 0.5 else np.inf
        return 0.0


def pareto_quantile(u, shape: float, scale: float, location: float):
    """Quantile of the generalized Pareto law (MATLAB gprnd convention)."""
    u = np.asarray(u, dtype=float)
    if shape == 0:
        return location - scale * np.log1p(-u)
    return location + scale * ((1.0 - u) ** (-shape) - 1.0) / shape


def sample(noise: NoiseDistribution, rng: np.random.Generator, size=None):
    """Draw noise variates; array order is row-major (member-major for (n, d))."""
    kind = noise.kind
    if kind == "none":
        return np.zeros(size) if size is not None else 0.0
    if kind == "gaussian":
        return noise.mean + noise.std * rng.standard_normal(size)
    if kind == "exponential":
        return rng.exponential(noise.mean, size)
    if kind == "bimodal":
        sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
        return sign * noise.mode_offset + noise.component_std * rng.standard_normal(size)
    # pareto: u == 1 has an unbounded quantile, so redraw those entries
    u = np.asarray(rng.random(size), dtype=float)
    bad = u >= 1.0
    while np.any(bad):
        u[bad] = rng.random(int(bad.sum()))
        bad = u >= 1.0
    out = pareto_quantile(u, noise.shape, noise.scale, noise.location)
    return out if size is not None else float(out)


@dataclass(frozen=True)
class ObservationModel:
    map: str = "linear"
    noise: NoiseDistribution = NoiseDistribution()

    def __post_init__(self):
        if self.map not in MAPS:
            raise ValueError(f"unknown observation map {self.map!r}")

    def apply_map(self, x):
        x = np.asarray(x, dtype=float)
        return x ** 3 if self.map == "cubic" else x.copy()

    @property
    def is_linear_gaussian(self) -> bool:
        return self.map == "linear" and self.noise.kind in ("gaussian", "none")


def observe(model: ObservationModel, state, rng: np.random.Generator):
    state = np.asarray(state, dtype=float)
    return model.apply_map(state) + sample(model.noise, rng, state.shape)


def perturbed_forecast_observations(model: ObservationModel, ensemble,
                                    rng: np.random.Generator):
    """y_j = N(x_j) with an independent noise draw per member."""
    ensemble = np.asarray(ensemble, dtype=float)
    if ensemble.ndim != 2 or ensemble.shape[0] == 0:
        raise ValueError("ensemble must be a nonempty (n, d) array")
    return observe(model, ensemble, rng)


@dataclass
class ObservationRecord:
    time: float
    reference: np.ndarray
    perturbed: np.ndarray
