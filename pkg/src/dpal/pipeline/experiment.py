"""Experiment suites: budget planning, selection, labelling, fine-tuning, reporting."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..data import LabelOracle, oracle_label
from ..errors import BudgetInfeasibleError, ContractError
from ..numerics import seeded_rng
from ..selection import METHODS, select
from .config import ExperimentConfig, build_data, selection_for
from .training import finetune, train_baseline

CSV_FIELDS = (
    "seed",
    "method",
    "n_labeled",
    "eps_total",
    "test_acc",
    "pollution_fraction",
    "variant",
    "checkpoint_epoch",
    "eps_dp",
    "baseline_acc",
)
SELECTION_COST_METHODS = ("nearprivate",)

# tags for the per-(seed, variant, method) random streams
_SELECT, _LABEL, _TUNE = 3, 4, 5


def budget_plan(checkpoints, eps_limit, eps_dppca=0.0, eps_support=0.0) -> int:
    """Index of the latest checkpoint with ``eps_dp + eps_dppca + eps_support <= eps_limit``.

    ``checkpoints`` holds Checkpoint objects or plain epsilon values, in
    training order.
    """
    eps = [c if isinstance(c, (int, float)) else c.epsilon for c in checkpoints]
    feasible = [i for i, e in enumerate(eps) if e + eps_dppca + eps_support <= eps_limit]
    if not feasible:
        cheapest = min(eps) if eps else math.nan
        raise BudgetInfeasibleError(
            f"no checkpoint fits eps_limit={eps_limit}: cheapest has eps_dp={cheapest:.4f} "
            f"plus selection cost {eps_dppca + eps_support}"
        )
    return feasible[-1]


@dataclass(frozen=True)
class RunRow:
    seed: int
    method: str
    n_labeled: int
    eps_total: float
    test_acc: float
    pollution_fraction: float
    variant: int = 0
    checkpoint_epoch: int = 0
    eps_dp: float = 0.0
    baseline_acc: float = 0.0


@dataclass
class RunReport:
    seeds: tuple
    rows: list = field(default_factory=list)
    manifests: dict = field(default_factory=dict)

    def aggregate(self) -> list:
        """Mean and sample std over seeds for each (variant, method, n_labeled)."""
        groups = {}
        for r in self.rows:
            groups.setdefault((r.variant, r.method, r.n_labeled), []).append(r)
        out = []
        for (variant, method, n_labeled), rows in groups.items():
            entry = {"variant": variant, "method": method, "n_labeled": n_labeled, "n_seeds": len(rows)}
            for key in ("test_acc", "eps_total", "pollution_fraction"):
                vals = np.array([getattr(r, key) for r in rows])
                entry[f"{key}_mean"] = float(vals.mean())
                entry[f"{key}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            out.append(entry)
        return out

    def mean(self, method, key="test_acc", variant=0, n_labeled=None) -> float:
        vals = [
            getattr(r, key)
            for r in self.rows
            if r.method == method and r.variant == variant and (n_labeled is None or r.n_labeled == n_labeled)
        ]
        if not vals:
            raise KeyError(f"no rows for method {method!r}, variant {variant}")
        return float(np.mean(vals))

    def to_dict(self):
        return {
            "seeds": list(self.seeds),
            "rows": [asdict(r) for r in self.rows],
            "aggregate": self.aggregate(),
        }

    def write(self, out_dir, config=None) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(self.rows, out / "metrics.csv")
        doc = self.to_dict()
        if config is not None:
            doc["config"] = config
        (out / "report.json").write_text(json.dumps(doc, indent=2))
        mdir = out / "manifests"
        mdir.mkdir(exist_ok=True)
        for name, manifest in self.manifests.items():
            (mdir / f"{name}.json").write_text(json.dumps(manifest))


def write_metrics_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in asdict(r).items()})


def read_metrics_csv(path) -> list:
    types = {f: type(getattr(RunRow(0, "", 0, 0.0, 0.0, 0.0), f)) for f in CSV_FIELDS}
    with open(path, newline="") as fh:
        return [RunRow(**{k: types[k](v) for k, v in rec.items()}) for rec in csv.DictReader(fh)]


def _checkpoint_for(checkpoints, cfg, override, costs):
    if "checkpoint_epoch" in override:
        epoch = int(override["checkpoint_epoch"])
        matches = [i for i, c in enumerate(checkpoints) if c.epoch == epoch]
        if not matches:
            raise BudgetInfeasibleError(f"no checkpoint for epoch {epoch}")
        idx = matches[0]
        if cfg.eps_limit is not None and checkpoints[idx].epsilon + costs[0] + costs[1] > cfg.eps_limit:
            raise BudgetInfeasibleError(f"checkpoint at epoch {epoch} plus selection exceeds eps_limit")
        return idx
    if cfg.eps_limit is None:
        return len(checkpoints) - 1
    return budget_plan(checkpoints, cfg.eps_limit, *costs)


def run_experiment(cfg: ExperimentConfig, data=None, out_dir=None, progress=None) -> RunReport:
    """Train one DP baseline per seed, then select, label and fine-tune per method.

    Methods that spend privacy on selection start from an earlier checkpoint
    so that every row respects ``eps_limit``.  Rows with ``n_labeled == 0``
    report the chosen checkpoint unchanged.
    """
    if data is None:
        data = build_data(cfg.dataset)
    report = RunReport(seeds=tuple(cfg.seeds))
    log = progress or (lambda msg: None)
    for seed in cfg.seeds:
        checkpoints = train_baseline(cfg, seed, data)
        log(f"seed {seed}: trained {len(checkpoints)} epochs, eps={checkpoints[-1].epsilon:.4f}")
        for variant, override in enumerate(cfg.sweep):
            sel_cfg = selection_for(cfg, override, seed)
            for method in cfg.methods:
                costs = (sel_cfg.eps_dppca, sel_cfg.eps_support) if method in SELECTION_COST_METHODS else (0.0, 0.0)
                ckpt = checkpoints[_checkpoint_for(checkpoints, cfg, override, costs)]
                eps_dp = ckpt.epsilon
                tag = [seed, variant, METHODS.index(method)]
                if sel_cfg.n_labeled == 0:
                    row = RunRow(seed, method, 0, eps_dp, ckpt.test_accuracy, 0.0, variant, ckpt.epoch, eps_dp,
                                 ckpt.test_accuracy)
                    report.rows.append(row)
                    continue
                ledger = ckpt.ledger.snapshot()
                result = select(method, ckpt.params, data.public, sel_cfg, private=data.private,
                                rng=seeded_rng(tag + [_SELECT]), ledger=ledger)
                if method not in SELECTION_COST_METHODS and ledger != ckpt.ledger:
                    raise ContractError(f"{method} selection changed the privacy ledger")
                oracle = LabelOracle(data.public, budget=sel_cfg.n_labeled, pollution_policy=cfg.pollution_policy,
                                     seed=tag + [_LABEL])
                labeled = oracle_label(oracle, result.chosen)
                tuned = ckpt
                if len(labeled):
                    tuned = finetune(ckpt, labeled, cfg.finetune, data.test, seed=tag + [_TUNE])
                if tuned.ledger != ckpt.ledger:
                    raise ContractError("fine-tuning changed the privacy ledger")
                eps_total = ledger.compose()[0]
                if cfg.eps_limit is not None and eps_total > cfg.eps_limit:
                    raise BudgetInfeasibleError(f"{method} row spends {eps_total} > eps_limit {cfg.eps_limit}")
                pollution = result.pollution_fraction(data.public)
                report.rows.append(RunRow(seed, method, sel_cfg.n_labeled, eps_total, tuned.test_accuracy, pollution,
                                          variant, ckpt.epoch, eps_dp, ckpt.test_accuracy))
                report.manifests[f"v{variant}_{method}_seed{seed}"] = result.to_manifest(sel_cfg.to_dict(), data.public)
                log(f"seed {seed} v{variant} {method}: epoch {ckpt.epoch} acc {ckpt.test_accuracy:.4f} -> "
                    f"{tuned.test_accuracy:.4f}, eps {eps_total:.4f}, pollution {pollution:.3f}")
    if out_dir is not None:
        report.write(out_dir, cfg.to_dict())
    return report


__all__ = [
    "CSV_FIELDS",
    "RunReport",
    "RunRow",
    "budget_plan",
    "read_metrics_csv",
    "run_experiment",
    "write_metrics_csv",
]
