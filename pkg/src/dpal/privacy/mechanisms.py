"""Laplace and Gaussian output perturbation, and covariance-perturbation DP-PCA."""

from __future__ import annotations

import math

import numpy as np

from ..errors import DimensionError, ParameterError
from ..numerics import PcaBasis, as_matrix, basis_from_moment, seeded_rng

# l1 sensitivity assumed by laplace_mechanism.  The support histogram in
# NearPrivate changes by 1 when a private point is added or removed (2 under
# swap adjacency); the noise scale is sensitivity / epsilon.
LAPLACE_SENSITIVITY = 1.0


def _check_eps(epsilon):
    if not epsilon > 0.0:
        raise ParameterError(f"epsilon={epsilon} must be positive")


def _check_delta(delta):
    if not 0.0 < delta < 1.0:
        raise ParameterError(f"delta={delta} must lie in (0, 1)")


def laplace_mechanism(value, epsilon, rng, ledger, label="laplace", sensitivity=None):
    """Add i.i.d. Laplace noise of scale ``sensitivity / epsilon`` to every coordinate."""
    _check_eps(epsilon)
    sensitivity = LAPLACE_SENSITIVITY if sensitivity is None else sensitivity
    rng = seeded_rng(rng)
    value = np.asarray(value, dtype=np.float64)
    noisy = value + rng.laplace(0.0, sensitivity / epsilon, size=value.shape)
    ledger.append("laplace", label=label, epsilon=float(epsilon))
    return noisy


def gaussian_noise_std(epsilon, delta, l2_sensitivity=1.0) -> float:
    """Classic Gaussian-mechanism calibration ``(Δ/ε) sqrt(2 ln(1.25/δ))``."""
    _check_eps(epsilon)
    _check_delta(delta)
    return l2_sensitivity / epsilon * math.sqrt(2.0 * math.log(1.25 / delta))


def gaussian_mechanism(value, epsilon, delta, rng, ledger, label="gaussian", l2_sensitivity=1.0):
    std = gaussian_noise_std(epsilon, delta, l2_sensitivity)
    rng = seeded_rng(rng)
    value = np.asarray(value, dtype=np.float64)
    noisy = value + rng.normal(0.0, std, size=value.shape)
    ledger.append("gaussian", label=label, epsilon=float(epsilon), delta=float(delta))
    return noisy


def symmetric_gaussian_noise(d, std, rng) -> np.ndarray:
    """d x d noise with the upper triangle sampled and mirrored below."""
    z = seeded_rng(rng).normal(0.0, std, size=(d, d))
    upper = np.triu(z)
    return upper + np.triu(z, 1).T


def clip_rows(E, max_norm=1.0) -> np.ndarray:
    norms = np.linalg.norm(E, axis=1)
    factor = np.minimum(1.0, max_norm / np.where(norms > 0, norms, 1.0))
    return E * factor[:, None]


def dp_pca(E, p, epsilon, delta, rng, ledger, label="dp_pca") -> PcaBasis:
    """Top-``p`` principal directions of ``E`` with (epsilon, delta)-DP.

    Rows are clipped to unit l2 norm, so the uncentered scatter matrix
    ``sum_i x_i x_i^T`` has l2 sensitivity 1.  Symmetric Gaussian noise is
    added to it before the eigendecomposition.  The returned basis has a zero
    mean and eigenvalues of the noisy scatter divided by ``n``, floored at 0.
    """
    _check_eps(epsilon)
    _check_delta(delta)
    E = as_matrix(E, "E")
    n, d = E.shape
    if p > d:
        raise DimensionError(f"p={p} exceeds embedding dimension {d}")
    if n == 0:
        raise DimensionError("E must have at least one row")
    X = clip_rows(E)
    scatter = X.T @ X
    noise = symmetric_gaussian_noise(d, gaussian_noise_std(epsilon, delta), rng)
    basis = basis_from_moment((scatter + noise) / n, p, np.zeros(d))
    ledger.append("gaussian", label=label, epsilon=float(epsilon), delta=float(delta))
    return basis
