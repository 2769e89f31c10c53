"""DP-SGD baseline training with per-epoch checkpoints, and public fine-tuning."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..errors import ContractError, DimensionError, ParameterError
from ..model import accuracy, batch_gradient, init_params
from ..numerics import seeded_rng
from ..privacy import PrivacyLedger, dpsgd_step
from .checkpoint import Checkpoint
from .config import ExperimentConfig, FinetuneSettings, steps_per_epoch

# sub-stream tags so that each consumer of randomness owns its own generator
_INIT, _SAMPLING, _FINETUNE = 0, 1, 2


def train_baseline(cfg: ExperimentConfig, seed, data, on_epoch=None) -> list:
    """Run DP-SGD on ``data.private`` and return one checkpoint per epoch.

    The whole run is a function of ``cfg`` and ``seed``.  ``on_epoch`` is
    called with each new checkpoint (handy for progress output).
    """
    params = init_params(cfg.architecture, [seed, _INIT])
    rng = seeded_rng([seed, _SAMPLING])
    ledger = PrivacyLedger(delta_target=cfg.delta)
    steps = steps_per_epoch(cfg)
    checkpoints = []
    for epoch in range(1, cfg.dpsgd.epochs + 1):
        for _ in range(steps):
            params = dpsgd_step(params, data.private, cfg.dpsgd, rng, ledger)
        # score the float32 parameters that the checkpoint actually stores
        stored = params.as_float32()
        acc = accuracy(stored, data.test.features, data.test.labels)
        ckpt = Checkpoint.create(stored, epoch, ledger, acc, seed)
        checkpoints.append(ckpt)
        if on_epoch is not None:
            on_epoch(ckpt)
    return checkpoints


def finetune(ckpt: Checkpoint, labeled, settings: FinetuneSettings, test=None, seed=(0, _FINETUNE)) -> Checkpoint:
    """Plain mini-batch SGD on labelled public examples, starting from ``ckpt``.

    The ledger is carried over untouched: only public data is read.  Test
    accuracy is re-measured when ``test`` is given.  ``seed`` drives the
    shuffling order.
    """
    if labeled.role != "public":
        raise ContractError(f"fine-tuning data must be public, got role {labeled.role!r}")
    if labeled.labels is None:
        raise ContractError("fine-tuning data needs labels")
    if settings.epochs < 0 or settings.batch_size < 1 or not settings.learning_rate > 0:
        raise ParameterError("invalid fine-tune settings")
    n = len(labeled)
    if n == 0 and settings.epochs > 0:
        raise DimensionError("nothing to fine-tune on")
    params = ckpt.params
    rng = seeded_rng(seed)
    for _ in range(settings.epochs):
        order = rng.permutation(n)
        for start in range(0, n, settings.batch_size):
            idx = order[start:start + settings.batch_size]
            _, grad = batch_gradient(params, labeled.features[idx], labeled.labels[idx])
            params = params.add(grad, -settings.learning_rate)
    if settings.epochs == 0:
        return ckpt
    params = params.as_float32()
    acc = ckpt.test_accuracy if test is None else accuracy(params, test.features, test.labels)
    return replace(ckpt, params=params, ledger=ckpt.ledger.snapshot(), test_accuracy=acc)


def evaluate(ckpt: Checkpoint, test) -> float:
    return accuracy(ckpt.params, test.features, test.labels)


def epsilon_series(checkpoints) -> np.ndarray:
    return np.array([c.epsilon for c in checkpoints])


__all__ = ["epsilon_series", "evaluate", "finetune", "train_baseline"]
