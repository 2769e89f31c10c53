"""DP-SGD: Poisson subsampling, per-example clipping, Gaussian noise."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import DimensionError, ParameterError
from ..model import ModelParams, grad_norms, per_example_terms, weighted_grad_sum


@dataclass(frozen=True)
class DpSgdConfig:
    clip_norm: float = 1.0  # math.inf disables clipping
    noise_multiplier: float = 1.1
    sampling_rate: float = 0.01
    learning_rate: float = 0.1
    steps_per_epoch: int = 100
    epochs: int = 1

    def __post_init__(self):
        if not self.clip_norm > 0:
            raise ParameterError("clip_norm must be positive")
        if self.noise_multiplier < 0:
            raise ParameterError("noise_multiplier must be non-negative")
        if not 0.0 < self.sampling_rate <= 1.0:
            raise ParameterError("sampling_rate must lie in (0, 1]")
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be positive")
        if self.noise_multiplier > 0 and math.isinf(self.clip_norm):
            raise ParameterError("noise needs a finite clip_norm")

    def to_dict(self):
        d = asdict(self)
        if math.isinf(self.clip_norm):
            d["clip_norm"] = None
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("clip_norm", 1.0) is None:
            d["clip_norm"] = math.inf
        return cls(**d)


def clip_gradient(g: ModelParams, clip_norm) -> ModelParams:
    """Scale ``g`` into the l2 ball of radius ``clip_norm``.

    The norm is over the whole flattened gradient.  The scale factor is nudged
    down by ulps if rounding would leave the result a hair outside the ball.
    """
    if not clip_norm > 0:
        raise ParameterError("clip_norm must be positive")
    norm = g.norm()
    if norm <= clip_norm:
        return g
    factor = clip_norm / norm
    out = g.scale(factor)
    while out.norm() > clip_norm:
        factor = np.nextafter(factor, 0.0)
        out = g.scale(factor)
    return out


def poisson_sample(n, q, rng) -> np.ndarray:
    """Indices of a Poisson subsample: each of ``n`` kept independently with prob. ``q``.

    Drawing the size from Binomial(n, q) and then a uniform subset of that
    size gives the same distribution as n independent coin flips.
    """
    if q >= 1.0:
        return np.arange(n)
    size = int(rng.binomial(n, q))
    return np.sort(rng.choice(n, size=size, replace=False))


def dpsgd_step(params: ModelParams, dataset, cfg: DpSgdConfig, rng, ledger, label="dpsgd") -> ModelParams:
    """One DP-SGD update; always records one subsampled-Gaussian ledger entry.

    ``dataset`` needs ``features`` and ``labels``.  The noisy sum of clipped
    gradients is divided by the expected batch size ``q * N``.
    """
    X, y = dataset.features, dataset.labels
    n = X.shape[0]
    if n == 0:
        raise DimensionError("dataset must be non-empty")
    q = cfg.sampling_rate
    idx = poisson_sample(n, q, rng)
    ledger.append("subsampled_gaussian", label=label, q=float(q), sigma=float(cfg.noise_multiplier))
    if len(idx) == 0:
        return params
    _, inputs, deltas = per_example_terms(params, X[idx], y[idx])
    norms = grad_norms(inputs, deltas)
    if math.isinf(cfg.clip_norm):
        coef = np.ones(len(idx))
    else:
        coef = np.minimum(1.0, cfg.clip_norm / np.where(norms > 0, norms, 1.0))
    total = weighted_grad_sum(params.arch, inputs, deltas, coef)
    if cfg.noise_multiplier > 0:
        std = cfg.noise_multiplier * cfg.clip_norm
        total = ModelParams(
            params.arch,
            tuple(w + rng.normal(0.0, std, size=w.shape) for w in total.weights),
            tuple(b + rng.normal(0.0, std, size=b.shape) for b in total.biases),
        )
    return params.add(total, -cfg.learning_rate / (q * n))
