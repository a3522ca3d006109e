"""Ensemble Kalman filters (EnKF, conditional-Gaussian, normal-score) on Lorenz-96."""

__version__ = "0.1.0"
