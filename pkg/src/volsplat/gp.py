"""Minimal exact Gaussian process (Matern-5/2) with a UCB acquisition."""

from __future__ import annotations

import numpy as np

SQRT5 = np.sqrt(5.0)


def matern52(a: np.ndarray, b: np.ndarray, lengthscale: float) -> np.ndarray:
    """Isotropic Matern-5/2 kernel with unit signal variance."""
    d = np.sqrt(np.maximum(
        ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1), 0.0))
    s = SQRT5 * d / lengthscale
    return (1.0 + s + s * s / 3.0) * np.exp(-s)


class GaussianProcess:
    """Exact GP regression on min-max-normalized targets, zero prior mean."""

    def __init__(self, lengthscale: float = 0.2, noise: float = 1e-6):
        self.lengthscale = lengthscale
        self.noise = noise
        self._x = None
        self._chol = None
        self._alpha = None
        self._y_lo = 0.0
        self._y_span = 1.0

    def fit(self, x: np.ndarray, y: np.ndarray) -> "GaussianProcess":
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64)
        self._y_lo = float(y.min())
        span = float(y.max() - y.min())
        self._y_span = span if span > 0 else 1.0
        yn = (y - self._y_lo) / self._y_span
        k = matern52(x, x, self.lengthscale)
        k[np.diag_indices_from(k)] += self.noise
        self._chol = np.linalg.cholesky(k)
        self._alpha = np.linalg.solve(
            self._chol.T, np.linalg.solve(self._chol, yn))
        self._x = x
        return self

    def predict(self, xq: np.ndarray):
        """Posterior mean (denormalized) and std (normalized units)."""
        xq = np.atleast_2d(np.asarray(xq, dtype=np.float64))
        if self._x is None:
            return (np.zeros(xq.shape[0]), np.ones(xq.shape[0]))
        ks = matern52(self._x, xq, self.lengthscale)
        mean_n = ks.T @ self._alpha
        v = np.linalg.solve(self._chol, ks)
        var = np.maximum(1.0 - (v * v).sum(axis=0), 0.0)
        return mean_n * self._y_span + self._y_lo, np.sqrt(var)

    def ucb(self, xq: np.ndarray, kappa: float) -> np.ndarray:
        """mu + kappa * sigma in normalized-gain units (ranking score)."""
        xq = np.atleast_2d(np.asarray(xq, dtype=np.float64))
        if self._x is None:
            return np.zeros(xq.shape[0])
        mean, std = self.predict(xq)
        mean_n = (mean - self._y_lo) / self._y_span
        return mean_n + kappa * std
