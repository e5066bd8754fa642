"""Exact GP regression on a cached Cholesky factor.

All solves go through the triangular factor of ``A = K(X, X) + noise * I``;
no explicit inverse is formed.  The prior mean is zero in standardized space.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .dataset import AffineTransform, Dataset
from .errors import DimensionMismatch, NegativeVariance
from .kernels import KernelModel, _as2d, gram, gram_diag, jittered_cholesky

log = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))
NEGATIVE_VARIANCE_TOL = 1e-8


@dataclass(frozen=True)
class TrainedGP:
    X: np.ndarray
    y: np.ndarray
    kernel: KernelModel
    chol: np.ndarray
    weights: np.ndarray
    jitter: float = 0.0
    mean_const: float = 0.0
    target_transform: AffineTransform = None

    @property
    def n(self):
        return len(self.y)


@dataclass(frozen=True)
class Prediction:
    """Posterior predictive marginals; kW / kW^2 when built from a standardized fit."""

    mean: np.ndarray
    variance: np.ndarray
    includes_noise: bool
    clamped: int = 0

    def __len__(self):
        return len(self.mean)

    @property
    def std(self):
        return np.sqrt(self.variance)


def fit_xy(X, y, kernel: KernelModel, target_transform=None, mean_const=0.0) -> TrainedGP:
    X = _as2d(X, kernel.dim)
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != len(y) or len(y) < 1:
        raise DimensionMismatch("X and y must be non-empty with matching lengths")
    A = gram(kernel, X, include_noise=True)
    # Noise-free models ask for exact interpolation: no jitter is added.
    L, jitter = jittered_cholesky(A, allow_jitter=kernel.noise_variance > 0)
    weights = sla.cho_solve((L, True), y - mean_const, check_finite=False)
    for a in (X, y, L, weights):
        a.setflags(write=False)
    return TrainedGP(X, y, kernel, L, weights, jitter, mean_const,
                     target_transform or AffineTransform.identity(1))


def fit(train: Dataset, kernel: KernelModel) -> TrainedGP:
    """Factorize the noisy Gram matrix of ``train`` and cache the weight vector."""
    return fit_xy(train.X, train.y, kernel, train.target_transform)


def log_marginal_likelihood(model: TrainedGP) -> float:
    r = model.y - model.mean_const
    logdet = 2.0 * np.sum(np.log(np.diag(model.chol)))
    return float(-0.5 * r @ model.weights - 0.5 * logdet - 0.5 * model.n * LOG_2PI)


def predict(model: TrainedGP, X_star, include_noise=True, original_units=True) -> Prediction:
    """Posterior predictive mean and marginal variance at ``X_star``.

    ``X_star`` is in the model's (standardized) input space.  With
    ``original_units`` the result is mapped back through the target transform.
    """
    kernel = model.kernel
    X_star = _as2d(X_star, kernel.dim)
    Ks = gram(kernel, X_star, model.X)  # (M, N)
    mean = model.mean_const + Ks @ model.weights
    V = sla.solve_triangular(model.chol, Ks.T, lower=True, check_finite=False)
    prior = gram_diag(kernel, X_star)
    var = prior - np.sum(V * V, axis=0)
    tol = NEGATIVE_VARIANCE_TOL * np.maximum(1.0, prior)
    if np.any(var < -tol):
        raise NegativeVariance(f"predictive variance {var.min():.3g} below tolerance")
    neg = var < 0
    clamped = int(neg.sum())
    if clamped:
        log.warning("clamped %d slightly negative predictive variances", clamped)
        var = np.where(neg, 0.0, var)
    if include_noise:
        var = var + kernel.noise_variance
    if original_units:
        tt = model.target_transform
        mean = tt.invert(mean)
        var = tt.invert_variance(var)
    return Prediction(mean, var, include_noise, clamped)


def predict_dataset(model: TrainedGP, data: Dataset, include_noise=True) -> Prediction:
    return predict(model, data.X, include_noise=include_noise)
