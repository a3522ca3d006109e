import numpy as np


def exact_moment_noise(forecast, r_diag, rng):
    """Noise with zero mean, zero sample covariance with ``forecast`` and sample
    covariance exactly diag(r_diag). Needs n - 1 > 2 d."""
    n, d = forecast.shape
    anomalies = forecast - forecast.mean(axis=0)
    g = rng.standard_normal((n, d))
    g -= g.mean(axis=0)
    g -= anomalies @ np.linalg.lstsq(anomalies, g, rcond=None)[0]
    s = g.T @ g / (n - 1)
    w, v = np.linalg.eigh(s)
    whiten = v @ np.diag(w ** -0.5) @ v.T
    return g @ whiten * np.sqrt(r_diag)


def equivalence_instance(rng, d, n):
    """Vanilla and CG inputs whose innovations coincide (eps' = -eps, y = T)."""
    truth = rng.normal(0, 3, d)
    forecast = truth + rng.normal(0, 1.5, (n, d)) + rng.normal(0, 1, d)
    r_diag = rng.uniform(0.5, 2.0, d)
    eps = exact_moment_noise(forecast, r_diag, rng)
    return forecast, truth, r_diag, eps
