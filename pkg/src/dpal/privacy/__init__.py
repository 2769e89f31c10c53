"""DP-SGD, RDP accounting, noise mechanisms, DP-PCA and the privacy ledger."""

from .accountant import (
    DEFAULT_ORDERS,
    RdpCurve,
    compose_epsilon,
    dpsgd_epsilon,
    rdp_subsampled_gaussian,
    rdp_to_epsilon,
)
from .dpsgd import DpSgdConfig, clip_gradient, dpsgd_step, poisson_sample
from .ledger import LedgerEntry, PrivacyLedger
from .mechanisms import (
    LAPLACE_SENSITIVITY,
    dp_pca,
    gaussian_mechanism,
    gaussian_noise_std,
    laplace_mechanism,
    symmetric_gaussian_noise,
)

__all__ = [
    "DEFAULT_ORDERS",
    "DpSgdConfig",
    "LAPLACE_SENSITIVITY",
    "LedgerEntry",
    "PrivacyLedger",
    "RdpCurve",
    "clip_gradient",
    "compose_epsilon",
    "dp_pca",
    "dpsgd_epsilon",
    "dpsgd_step",
    "gaussian_mechanism",
    "gaussian_noise_std",
    "laplace_mechanism",
    "poisson_sample",
    "rdp_subsampled_gaussian",
    "rdp_to_epsilon",
    "symmetric_gaussian_noise",
]
