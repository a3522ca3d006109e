"""Lorenz-96 dynamics and a fixed-step RK4 integrator.

States are numpy arrays whose last axis is the state dimension, so a whole
ensemble of shape ``(n, d)`` can be advanced in one call.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FORCING = 8.0


class InvalidDimensionError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    """Raised when integration produces non-finite values."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ValueError("times and states must have equal length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return len(self.times)


def _check_dim(x: np.ndarray) -> None:
    if x.shape[-1] < 4:
        raise InvalidDimensionError(
            f"Lorenz-96 needs at least 4 dimensions, got {x.shape[-1]}")


def l96_tendency(x: np.ndarray, forcing: float = FORCING) -> np.ndarray:
    """dx_j/dt = (x_{j+1} - x_{j-2}) x_{j-1} - x_j + F with cyclic indices."""
    x = np.asarray(x, dtype=float)
    _check_dim(x)
    return ((np.roll(x, -1, axis=-1) - np.roll(x, 2, axis=-1))
            * np.roll(x, 1, axis=-1) - x + forcing)


def integrate_step(x: np.ndarray, dt: float, forcing: float = FORCING,
                   step: int | None = None) -> np.ndarray:
    """One classical RK4 step. ``step`` is only used to label a DivergenceError."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        k1 = l96_tendency(x, forcing)
        k2 = l96_tendency(x + 0.5 * dt * k1, forcing)
        k3 = l96_tendency(x + 0.5 * dt * k2, forcing)
        k4 = l96_tendency(x + dt * k3, forcing)
        out = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise DivergenceError(f"non-finite state after RK4 step {step}", step)
    return out


def generate_truth(x0: np.ndarray, dt: float, n_steps: int,
                   forcing: float = FORCING, t0: float = 0.0) -> Trajectory:
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x = np.asarray(x0, dtype=float).copy()
    _check_dim(x)
    states = np.empty((n_steps + 1, x.size))
    states[0] = x
    for k in range(n_steps):
        x = integrate_step(x, dt, forcing, step=k)
        states[k + 1] = x
    times = t0 + dt * np.arange(n_steps + 1)
    return Trajectory(times, states)


def default_initial_state(d: int = 40, forcing: float = FORCING,
                          bump: float = 0.01) -> np.ndarray:
    """Fixed point F with a small bump in the first component."""
    x = np.full(d, forcing)
    x[0] += bump
    return x


def spin_up(x0: np.ndarray, dt: float, seconds: float,
            forcing: float = FORCING) -> np.ndarray:
    n_steps = int(round(seconds / dt))
    if n_steps == 0:
        return np.asarray(x0, dtype=float).copy()
    return generate_truth(x0, dt, n_steps, forcing).states[-1]
