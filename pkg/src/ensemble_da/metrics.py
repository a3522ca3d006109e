"""Verification scores: ensemble-mean RMSE and ensemble CRPS."""
from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

COLUMNS = ("frmse", "armse", "fcrps", "acrps")


def rmse(ensemble, truth) -> float:
    """RMSE of the ensemble mean against the truth, averaged over dimensions."""
    ensemble = np.atleast_2d(np.asarray(ensemble, dtype=float))
    truth = np.asarray(truth, dtype=float)
    if ensemble.shape[1] != truth.shape[-1]:
        raise ValueError("ensemble and truth dimensions differ")
    return float(np.sqrt(np.mean((ensemble.mean(axis=0) - truth) ** 2)))


def crps(members, truth):
    """Empirical ensemble CRPS, vectorized over trailing dimensions.

    mean|x_j - T| - 1/(2 n^2) sum_jk |x_j - x_k|, computed with the sorted
    form of the pairwise sum: sum_jk |x_j - x_k| = 2 sum_i (2i - n - 1) x_(i).
    """
    x = np.asarray(members, dtype=float)
    truth = np.asarray(truth, dtype=float)
    n = x.shape[0]
    if n < 1:
        raise ValueError("need at least one member")
    skill = np.abs(x - truth).mean(axis=0)
    xs = np.sort(x, axis=0)
    weights = (2 * np.arange(1, n + 1) - n - 1).reshape((n,) + (1,) * (x.ndim - 1))
    spread = 2.0 * (weights * xs).sum(axis=0) / (2.0 * n * n)
    return skill - spread


def mean_crps(ensemble, truth) -> float:
    """Per-dimension CRPS averaged over dimensions."""
    return float(np.mean(crps(ensemble, truth)))


@dataclass(frozen=True)
class CycleMetrics:
    time: float
    frmse: float
    armse: float
    fcrps: float
    acrps: float


def cycle_metrics(t, forecast, analysis, truth) -> CycleMetrics:
    return CycleMetrics(float(t), rmse(forecast, truth), rmse(analysis, truth),
                        mean_crps(forecast, truth), mean_crps(analysis, truth))


@dataclass(frozen=True)
class Summary:
    frmse: float
    armse: float
    fcrps: float
    acrps: float
    n_cycles: int


def summarize(cycles, window=None) -> Summary:
    """Column means over ``window`` (a slice or (start, stop) pair)."""
    if window is not None and not isinstance(window, slice):
        window = slice(*window)
    selected = list(cycles)[window] if window is not None else list(cycles)
    if not selected:
        raise ValueError("summary window is empty")
    means = {c: float(np.mean([getattr(row, c) for row in selected])) for c in COLUMNS}
    return Summary(n_cycles=len(selected), **means)


@dataclass
class MetricSeries:
    cycles: list = field(default_factory=list)
    wallclock: float = 0.0

    def __len__(self):
        return len(self.cycles)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(row, name) for row in self.cycles])

    def summary(self, window=None) -> Summary:
        return summarize(self.cycles, window)


CYCLE_FIELDS = tuple(f.name for f in fields(CycleMetrics))
