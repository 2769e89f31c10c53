"""Command-line interface: ``dpal {train,select,finetune,experiment,report}``.

Exit codes: 0 success, 2 configuration error, 3 privacy budget infeasible,
4 data or file-format error, 1 anything else the toolkit rejects.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from ..data import LabelOracle, oracle_label
from ..errors import (
    BudgetError,
    BudgetInfeasibleError,
    ConfigError,
    ConsistencyError,
    DimensionError,
    DpalError,
    FormatError,
    LabelError,
)
from ..numerics import seeded_rng
from ..privacy import LedgerEntry
from ..selection import METHODS, select
from .checkpoint import load_checkpoint, save_checkpoint
from .config import FinetuneSettings, build_data, load_config, selection_for
from .experiment import RunReport, read_metrics_csv, run_experiment
from .training import finetune, train_baseline

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_BUDGET, EXIT_DATA = 0, 1, 2, 3, 4


def _say(msg):
    print(msg, file=sys.stderr, flush=True)


def cmd_train(args):
    cfg = load_config(args.config)
    seed = cfg.seeds[0] if args.seed is None else args.seed
    data = build_data(cfg.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index = []

    def save(ckpt):
        path = out / f"epoch{ckpt.epoch:03d}.ckpt"
        save_checkpoint(ckpt, path)
        index.append({"epoch": ckpt.epoch, "path": path.name, "epsilon": ckpt.epsilon,
                      "test_accuracy": ckpt.test_accuracy})
        _say(f"epoch {ckpt.epoch}: test accuracy {ckpt.test_accuracy:.4f}, epsilon {ckpt.epsilon:.4f}")

    train_baseline(cfg, seed, data, on_epoch=save)
    (out / "checkpoints.json").write_text(json.dumps({"seed": seed, "checkpoints": index}, indent=2))
    return EXIT_OK


def cmd_select(args):
    cfg = load_config(args.config)
    seed = cfg.seeds[0] if args.seed is None else args.seed
    ckpt = load_checkpoint(args.checkpoint)
    sel_cfg = selection_for(cfg, {}, seed)
    if cfg.eps_limit is not None and args.method == "nearprivate":
        if ckpt.epsilon + sel_cfg.eps_dppca + sel_cfg.eps_support > cfg.eps_limit:
            raise BudgetInfeasibleError(
                f"checkpoint eps {ckpt.epsilon:.4f} plus selection cost exceeds eps_limit {cfg.eps_limit}"
            )
    data = build_data(cfg.dataset)
    ledger = ckpt.ledger.snapshot()
    result = select(args.method, ckpt.params, data.public, sel_cfg, private=data.private,
                    rng=seeded_rng([seed, 3]), ledger=ledger)
    manifest = result.to_manifest(sel_cfg.to_dict(), data.public)
    # enough context for a later `finetune` to rebuild the pool and label it
    manifest["dataset"] = dict(cfg.dataset)
    manifest["finetune"] = cfg.finetune.to_dict()
    manifest["pollution_policy"] = cfg.pollution_policy
    manifest["seed"] = seed
    manifest["checkpoint_epsilon"] = ckpt.epsilon
    manifest["eps_total"] = ledger.compose()[0]
    Path(args.out).write_text(json.dumps(manifest))
    _say(f"{args.method}: chose {len(result.chosen)} examples, eps_total {manifest['eps_total']:.4f}")
    return EXIT_OK


def cmd_finetune(args):
    ckpt = load_checkpoint(args.checkpoint)
    try:
        manifest = json.loads(Path(args.manifest).read_text())
        chosen = manifest["chosen"]
        dataset = manifest["dataset"]
        entries = [LedgerEntry.from_dict(e) for e in manifest.get("ledger_entries", [])]
        settings = FinetuneSettings(**manifest.get("finetune", {}))
        policy = manifest.get("pollution_policy", "random")
        seed = int(manifest.get("seed", 0))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{args.manifest}: malformed selection manifest: {exc}") from exc
    data = build_data(dataset)
    oracle = LabelOracle(data.public, budget=len(chosen), pollution_policy=policy, seed=[seed, 4])
    labeled = oracle_label(oracle, chosen)
    tuned = finetune(ckpt, labeled, settings, data.test, seed=[seed, 5]) if len(labeled) else ckpt
    # the saved ledger covers the selection that produced the labels
    ledger = tuned.ledger.snapshot()
    ledger.extend(entries)
    save_checkpoint(type(tuned).create(tuned.params, tuned.epoch, ledger, tuned.test_accuracy, tuned.seed), args.out)
    _say(f"fine-tuned on {len(labeled)} examples: test accuracy {ckpt.test_accuracy:.4f} -> {tuned.test_accuracy:.4f}")
    return EXIT_OK


def cmd_experiment(args):
    cfg = load_config(args.config)
    report = run_experiment(cfg, out_dir=args.out, progress=_say)
    for agg in report.aggregate():
        _say(f"v{agg['variant']} {agg['method']} n={agg['n_labeled']}: "
             f"acc {agg['test_acc_mean']:.4f} +- {agg['test_acc_std']:.4f}, eps {agg['eps_total_mean']:.4f}, "
             f"pollution {agg['pollution_fraction_mean']:.3f}")
    return EXIT_OK


def cmd_report(args):
    source = Path(args.input)
    path = source / "metrics.csv" if source.is_dir() else source
    try:
        rows = read_metrics_csv(path)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed metrics file: {exc}") from exc
    report = RunReport(seeds=tuple(sorted({r.seed for r in rows})), rows=rows)
    agg = report.aggregate()
    fields = list(agg[0]) if agg else ["variant", "method", "n_labeled", "n_seeds"]
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(agg)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpal", description="Differentially private active learning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="DP-SGD baseline, one checkpoint per epoch")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("select", help="choose public examples to label")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("finetune", help="label a selection and fine-tune on it")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("experiment", help="full suite over seeds, methods and sweep entries")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="aggregate metrics.csv into mean/std per method")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _say(f"config error: {exc}")
        return EXIT_CONFIG
    except (BudgetInfeasibleError, BudgetError) as exc:
        _say(f"budget error: {exc}")
        return EXIT_BUDGET
    except (FormatError, ConsistencyError, LabelError, DimensionError, FileNotFoundError) as exc:
        _say(f"data error: {exc}")
        return EXIT_DATA
    except DpalError as exc:
        _say(f"error: {exc}")
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
