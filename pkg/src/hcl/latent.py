"""Equivalent latent variables: per-sample exogenous-noise proxies under a backbone graph.

Continuous columns map to their reconstruction residual; binary columns map to
the conditional mean of a Gaussian noise term truncated at the threshold
implied by the observed outcome.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import log_ndtr

from hcl.sem import MixedDataset, WeightedDag

SIGMA_FLOOR = 1e-3
_MILLS_CLAMP = 8.0
_CF_TERMS = 40
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass
class NoiseParams:
    mu_hat: np.ndarray
    sigma_hat: np.ndarray

    def __post_init__(self):
        self.mu_hat = np.asarray(self.mu_hat, dtype=float)
        self.sigma_hat = np.asarray(self.sigma_hat, dtype=float)
        if self.mu_hat.shape != self.sigma_hat.shape:
            raise ValueError("mu_hat and sigma_hat must have the same shape")
        if np.any(self.sigma_hat <= 0):
            raise ValueError("sigma_hat must be positive")


def predict_values(values: np.ndarray, backbone: WeightedDag) -> np.ndarray:
    """Linear prediction of every column from its backbone parents."""
    return np.asarray(values, dtype=float) @ backbone.weights


def estimate_noise_params(data: MixedDataset, backbone: WeightedDag, design: Optional[np.ndarray] = None) -> NoiseParams:
    """Residual mean/std for continuous columns; standard normal for binary ones."""
    x = data.values if design is None else design
    if x.shape[0] < 2:
        raise ValueError("need at least two samples to estimate noise parameters")
    resid = x - predict_values(x, backbone)
    mu = resid.mean(axis=0)
    sigma = np.maximum(resid.std(axis=0), SIGMA_FLOOR)
    binary = data.schema.binary_mask
    mu[binary] = 0.0
    sigma[binary] = 1.0
    return NoiseParams(mu, sigma)


def phi_continuous(x, x_hat):
    return np.asarray(x, dtype=float) - np.asarray(x_hat, dtype=float)


def _mills(a):
    """``pdf(a) / Phi(-a)``: mean of a standard normal truncated to ``(a, inf)``."""
    a = np.asarray(a, dtype=float)
    out = np.empty_like(a)
    big = a > _MILLS_CLAMP
    small = ~big
    # log-space ratio stays finite for moderately positive a
    out[small] = np.exp(-0.5 * a[small] ** 2 - _LOG_SQRT_2PI - log_ndtr(-a[small]))
    # Laplace continued fraction Phi(-a)/pdf(a) = 1/(a + 1/(a + 2/(a + ...))),
    # evaluated bottom-up; converges to machine precision well before a = 8.
    ab = a[big]
    tail = ab.copy()
    for k in range(_CF_TERMS, 0, -1):
        tail = ab + k / tail
    out[big] = tail
    return out


def phi_binary(x, x_hat, mu_hat, sigma_hat):
    """Expected exogenous noise given a binary outcome and its linear predictor.

    With ``a = (-x_hat - mu) / sigma`` the outcome ``x = 1`` means ``u > -x_hat``
    so ``z = mu + sigma * pdf(a) / Phi(-a)``; ``x = 0`` gives
    ``z = mu - sigma * pdf(a) / Phi(a)``.
    """
    x, x_hat, mu, sigma = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, x_hat, mu_hat, sigma_hat)))
    if np.any(sigma <= 0):
        raise ValueError("sigma_hat must be positive")
    a = (-x_hat - mu) / sigma
    up = mu + sigma * _mills(a)
    down = mu - sigma * _mills(-a)
    return np.where(x >= 0.5, up, down)


@dataclass
class LatentMatrix:
    values: np.ndarray
    noise: NoiseParams


def latent_matrix(
    data: MixedDataset,
    backbone: WeightedDag,
    design: Optional[np.ndarray] = None,
    noise: Optional[NoiseParams] = None,
) -> LatentMatrix:
    """Latent representation of every sample under ``backbone``.

    ``design`` is the matrix the backbone was fitted on and defaults to the
    column-centered data, matching the learner. Binary outcomes are always read
    from ``data.values``.
    """
    if design is None:
        x = data.values - data.values.mean(axis=0)
    else:
        x = np.asarray(design, dtype=float)
    x_hat = predict_values(x, backbone)
    noise = noise or estimate_noise_params(data, backbone, x)
    z = phi_continuous(x, x_hat)
    binary = data.schema.binary_mask
    if binary.any():
        z[:, binary] = phi_binary(data.values[:, binary], x_hat[:, binary], noise.mu_hat[binary], noise.sigma_hat[binary])
    return LatentMatrix(z, noise)
