"""Baseline training, checkpoints, experiments and the command-line interface."""

from .checkpoint import MAGIC, Checkpoint, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from .config import (
    ExperimentConfig,
    ExperimentData,
    FinetuneSettings,
    build_data,
    config_from_dict,
    load_config,
    selection_for,
    steps_per_epoch,
)
from .experiment import CSV_FIELDS, RunReport, RunRow, budget_plan, read_metrics_csv, run_experiment, write_metrics_csv
from .training import epsilon_series, evaluate, finetune, train_baseline

__all__ = [
    "CSV_FIELDS",
    "Checkpoint",
    "ExperimentConfig",
    "ExperimentData",
    "FinetuneSettings",
    "MAGIC",
    "RunReport",
    "RunRow",
    "budget_plan",
    "build_data",
    "config_from_dict",
    "decode_checkpoint",
    "encode_checkpoint",
    "epsilon_series",
    "evaluate",
    "finetune",
    "load_checkpoint",
    "load_config",
    "read_metrics_csv",
    "run_experiment",
    "save_checkpoint",
    "selection_for",
    "steps_per_epoch",
    "train_baseline",
    "write_metrics_csv",
]
