"""Ensemble Kalman analysis updates and the assimilation loop.

Ensembles are ``(n, d)`` arrays: one row per member.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import metrics
from .model import FORCING, DivergenceError, Trajectory, integrate_step
from .observation import ObservationModel, observe, perturbed_forecast_observations
from .transform import NormalScoreMap

VARIANTS = ("vanilla", "cg", "ns")
JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)


class SingularCovarianceError(np.linalg.LinAlgError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class FilterConfig:
    variant: str
    n: int = 100
    inflation: float = 1.0
    radius: float = 1.0
    obs_noise_var: float = 1.0  # diagonal of R, vanilla only
    allow_misspecified: bool = False
    divergence_rmse: float = 1e3
    divergence_patience: int = 5

    def validate(self, obs_model: ObservationModel | None = None):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.n < 2:
            raise ConfigError("ensemble size n must be >= 2")
        if not self.inflation >= 1:
            raise ConfigError("inflation must be >= 1")
        if not self.radius > 0:
            raise ConfigError("localization radius must be > 0")
        if self.variant == "vanilla":
            if not self.obs_noise_var > 0:
                raise ConfigError("vanilla EnKF needs a positive observation variance")
            if (obs_model is not None and not obs_model.is_linear_gaussian
                    and not self.allow_misspecified):
                raise ConfigError(
                    "vanilla EnKF assumes linear observations with Gaussian noise; "
                    f"got map={obs_model.map}, noise={obs_model.noise.kind} "
                    "(pass allow_misspecified to run it anyway)")
        return self


def cyclic_distance(d_dims: int) -> np.ndarray:
    i = np.arange(d_dims)
    diff = np.abs(i[:, None] - i[None, :])
    return np.minimum(diff, d_dims - diff)


def localization_matrix(d_dims: int, radius: float) -> np.ndarray:
    """Gaussian taper exp(-(dist/radius)^2 / 2) on cyclic distance."""
    if d_dims < 1 or not radius > 0:
        raise ValueError("need d_dims >= 1 and radius > 0")
    return np.exp(-0.5 * (cyclic_distance(d_dims) / radius) ** 2)


def inflate(ensemble, r: float):
    """Scale member deviations about the ensemble mean by r."""
    if not r >= 1:
        raise ValueError("inflation factor must be >= 1")
    ensemble = np.asarray(ensemble, dtype=float)
    if r == 1:
        return ensemble.copy()
    mean = ensemble.mean(axis=0)
    return mean + r * (ensemble - mean)


def sample_cov(a, b):
    """Cross-covariance of two ensembles with 1/(n-1) normalization."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.shape[0]
    if n < 2 or b.shape[0] != n:
        raise ValueError("need matching ensembles with at least two members")
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    return a.T @ b / (n - 1)


def spd_solve(matrix, rhs):
    """Solve matrix @ x = rhs by Cholesky, adding diagonal jitter if needed."""
    matrix = np.asarray(matrix, dtype=float)
    scale = float(np.mean(np.diag(matrix)))
    if not np.isfinite(scale):
        raise SingularCovarianceError("innovation covariance is not finite")
    eye = np.eye(matrix.shape[0])
    for jitter in JITTER_LADDER:
        try:
            factor = sla.cho_factor(matrix + jitter * abs(scale) * eye, lower=True)
        except np.linalg.LinAlgError:
            continue
        return sla.cho_solve(factor, rhs)
    raise SingularCovarianceError("innovation covariance is singular after jitter")


def vanilla_update(forecast, obs_ensemble, obs_noise_var):
    """Perturbed-observation EnKF with identity H:
    x_a = x_f + P (P + R)^-1 (y_j - x_f).
    """
    forecast = np.asarray(forecast, dtype=float)
    obs_ensemble = np.asarray(obs_ensemble, dtype=float)
    d = forecast.shape[1]
    r_diag = np.broadcast_to(np.asarray(obs_noise_var, dtype=float), (d,))
    p = sample_cov(forecast, forecast)
    innovation = obs_ensemble - forecast
    increment = p @ spd_solve(p + np.diag(r_diag), innovation.T)
    return forecast + increment.T


def cg_update(forecast, obs_ensemble, reference, loc=None):
    """Conditional-Gaussian update with optional Schur-product localization:
    x_a = x_f + (L o C_xy)(L o C_y)^-1 (y - y_j).
    """
    forecast = np.asarray(forecast, dtype=float)
    obs_ensemble = np.asarray(obs_ensemble, dtype=float)
    c_xy = sample_cov(forecast, obs_ensemble)
    c_y = sample_cov(obs_ensemble, obs_ensemble)
    if loc is not None:
        c_xy = loc * c_xy
        c_y = loc * c_y
    innovation = np.asarray(reference, dtype=float) - obs_ensemble
    if not np.any(innovation):
        return forecast.copy()
    return forecast + (c_xy @ spd_solve(c_y, innovation.T)).T


def ns_update(forecast, obs_ensemble, reference, loc=None, inflation: float = 1.0):
    """Normal-score EnKF analysis given the observation ensemble.

    Fits a transform on the forecast members and one on the pooled
    observations (ensemble plus reference), inflates and updates in the
    latent space, then maps the analysis back.
    """
    forecast = np.asarray(forecast, dtype=float)
    obs_ensemble = np.asarray(obs_ensemble, dtype=float)
    reference = np.asarray(reference, dtype=float)
    psi_x = NormalScoreMap.fit(forecast)
    psi_y = NormalScoreMap.fit(np.vstack([obs_ensemble, reference]))
    x_hat = inflate(psi_x.forward(forecast), inflation)
    y_hat = psi_y.forward(obs_ensemble)
    ref_hat = psi_y.forward(reference)
    analysis_hat = cg_update(x_hat, y_hat, ref_hat, loc)
    return psi_x.inverse(analysis_hat)


def ns_enkf_step(forecast, obs_model: ObservationModel, truth_state, cfg: FilterConfig,
                 rng: np.random.Generator, loc=None, ref_rng=None):
    """Draw observations for one cycle and apply the normal-score update.

    ``ref_rng`` draws the reference observation; defaults to ``rng``.
    """
    forecast = np.asarray(forecast, dtype=float)
    if loc is None:
        loc = localization_matrix(forecast.shape[1], cfg.radius)
    reference = observe(obs_model, truth_state, ref_rng if ref_rng is not None else rng)
    obs_ensemble = perturbed_forecast_observations(obs_model, forecast, rng)
    return ns_update(forecast, obs_ensemble, reference, loc, cfg.inflation)


def analysis_step(forecast, truth_state, obs_model: ObservationModel, cfg: FilterConfig,
                  obs_rng: np.random.Generator, ref_rng: np.random.Generator, loc):
    """One assimilation for any variant. Random draws: reference first, then
    the observation ensemble in member-major order."""
    if cfg.variant == "vanilla":
        # perturbed copies of the one real observation, drawn from N(0, R)
        x = inflate(forecast, cfg.inflation)
        reference = observe(obs_model, truth_state, ref_rng)
        perturbations = np.sqrt(cfg.obs_noise_var) * obs_rng.standard_normal(x.shape)
        return vanilla_update(x, reference + perturbations, cfg.obs_noise_var)
    if cfg.variant == "cg":
        x = inflate(forecast, cfg.inflation)
        reference = observe(obs_model, truth_state, ref_rng)
        obs_ensemble = perturbed_forecast_observations(obs_model, x, obs_rng)
        return cg_update(x, obs_ensemble, reference, loc)
    return ns_enkf_step(forecast, obs_model, truth_state, cfg, obs_rng, loc, ref_rng)


@dataclass
class FilterResult:
    forecast_means: np.ndarray
    analysis_means: np.ndarray
    metrics: metrics.MetricSeries
    diverged_at: int | None = None
    message: str = ""
    final_ensemble: np.ndarray | None = field(default=None, repr=False)

    @property
    def completed(self) -> bool:
        return self.diverged_at is None


def run_filter(truth: Trajectory, cfg: FilterConfig, obs_model: ObservationModel,
               initial_ensemble, obs_rng: np.random.Generator,
               ref_rng: np.random.Generator | None = None,
               forcing: float = FORCING, assimilate_every: int = 1) -> FilterResult:
    """Cycle the filter along ``truth``.

    ``initial_ensemble`` sits at ``truth.times[0]``; cycle k (0-based) forecasts
    to ``truth.times[k + 1]`` and assimilates there when k is a multiple of
    ``assimilate_every``. Divergence stops the loop and is reported in the
    result; metrics up to the last good cycle are kept.
    """
    cfg.validate(obs_model)
    ref_rng = ref_rng if ref_rng is not None else obs_rng
    ens = np.array(initial_ensemble, dtype=float)
    if ens.ndim != 2 or ens.shape[1] != truth.states.shape[1]:
        raise ValueError("initial ensemble must be (n, d) with d matching the truth")
    dt = float(truth.times[1] - truth.times[0])
    loc = localization_matrix(ens.shape[1], cfg.radius)
    n_cycles = len(truth) - 1
    cycles, f_means, a_means = [], [], []
    diverged_at, message, strikes = None, "", 0
    start = time.perf_counter()
    for k in range(n_cycles):
        t, x_true = truth.times[k + 1], truth.states[k + 1]
        try:
            forecast = integrate_step(ens, dt, forcing, step=k)
            if k % assimilate_every == 0:
                with np.errstate(over="ignore", invalid="ignore"):
                    analysis = analysis_step(forecast, x_true, obs_model, cfg,
                                             obs_rng, ref_rng, loc)
                if not np.all(np.isfinite(analysis)):
                    raise DivergenceError(f"non-finite analysis at cycle {k}", k)
            else:
                analysis = forecast
        except (DivergenceError, np.linalg.LinAlgError, FloatingPointError) as err:
            diverged_at, message = k, str(err)
            break
        row = metrics.cycle_metrics(t, forecast, analysis, x_true)
        strikes = strikes + 1 if max(row.frmse, row.armse) > cfg.divergence_rmse else 0
        if strikes >= cfg.divergence_patience:
            diverged_at = k
            message = (f"ensemble-mean RMSE above {cfg.divergence_rmse:g} for "
                       f"{cfg.divergence_patience} consecutive cycles")
            break
        cycles.append(row)
        f_means.append(forecast.mean(axis=0))
        a_means.append(analysis.mean(axis=0))
        ens = analysis
    series = metrics.MetricSeries(cycles, wallclock=time.perf_counter() - start)
    d = ens.shape[1]
    return FilterResult(np.reshape(f_means, (-1, d)), np.reshape(a_means, (-1, d)),
                        series, diverged_at, message, ens)
