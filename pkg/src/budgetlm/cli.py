"""Command-line entry point: prepare-data, train, sweep, report.

Exit codes: 0 success, 2 usage error, 3 configuration error, 4 data error,
5 runtime error. Logs go to stderr; data products only ever go to files.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunManifest, load_config, read_manifest, resolve_config, write_manifest
from .costs import HardwareSpec, ThroughputRecord, dollar_estimate, emit_table, gb_hours
from .errors import BudgetLMError, ConfigError, DataError
from .prepare import prepare_corpus
from .sweep import (
    PruneSchedule,
    SubprocessTrialRunner,
    build_grid,
    parse_grid_file,
    run_sweep,
)
from .trainer import Trainer
from .vocab import load_vocab

_DTYPES = {"float32": np.float32, "float64": np.float64}


def _err(msg: str) -> None:
    print(f"budgetlm: {msg}", file=sys.stderr)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="budgetlm",
        description="Pretrain a masked language model under a fixed wall-clock budget.",
    )
    parser.add_argument("--version", action="version", version=f"budgetlm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", help="turn raw text into pre-masked binary shards")
    p.add_argument("--input", required=True, help="directory of .txt files")
    p.add_argument("--vocab", required=True, help="vocab file (one token per line)")
    p.add_argument("--specials", default=None, help="special-token header file")
    p.add_argument("--seq-len", type=int, default=None)
    p.add_argument("--copies", type=int, default=None)
    p.add_argument("--mask-prob", type=float, default=None)
    p.add_argument("--val-fraction", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--shard-size", type=int, default=None)
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train one model against a wall-clock budget")
    p.add_argument("--shards", required=True, help="prepare-data output directory")
    p.add_argument("--preset", default=None, choices=["tiny", "small", "large"])
    p.add_argument("--bsz", type=int, default=None)
    p.add_argument("--peak-lr", type=float, default=None)
    p.add_argument("--warmup", type=float, default=None)
    p.add_argument("--days-factor", type=float, default=None)
    p.add_argument("--budget-seconds", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--micro-bsz", type=int, default=None)
    p.add_argument("--calib-steps", type=int, default=None)
    p.add_argument("--dtype", default=None, choices=sorted(_DTYPES))
    p.add_argument("--run-until", type=float, default=None,
                   help="pause after this much training time (seconds); resume by re-running")
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--include-calibration-in-budget", action="store_true", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="run a hyperparameter grid with time-based pruning")
    p.add_argument("--grid", default=None, help="grid file listing axis values")
    p.add_argument("--shards", required=True)
    p.add_argument("--budget-seconds", type=float, default=None)
    p.add_argument("--slots", type=int, default=None)
    p.add_argument("--preset", default=None, choices=["tiny", "small", "large"])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--micro-bsz", type=int, default=None)
    p.add_argument("--threshold", type=float, default=6.0,
                   help="checkpoint-1 validation loss bar")
    p.add_argument("--keep-fraction", type=float, default=0.5)
    p.add_argument("--checkpoint1", type=float, default=0.125)
    p.add_argument("--checkpoint2", type=float, default=0.5)
    p.add_argument("--threads-per-trial", type=int, default=1)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="budget arithmetic reports")
    rsub = p.add_subparsers(dest="report_kind", required=True)
    rc = rsub.add_parser("cost", help="GB-hours and dollar estimate")
    rc.add_argument("--gpus", type=int, required=True)
    rc.add_argument("--gpu-gb", type=float, required=True)
    rc.add_argument("--hours", type=float, required=True)
    rc.add_argument("--rate-low", type=float, default=None)
    rc.add_argument("--rate-high", type=float, default=None)
    rt = rsub.add_parser("table", help="days-to-cover table from measured throughput")
    rt.add_argument("--throughput-log", required=True,
                    help="TSV: label, bsz, samples_per_second (with header)")
    rt.add_argument("--samples", type=int, required=True)

    return parser


def _resolved(args: argparse.Namespace, keys: dict[str, str]) -> dict:
    """defaults < --config file < explicit flags, for the given flag->key map."""
    file_values = load_config(args.config) if getattr(args, "config", None) else None
    overrides = {key: getattr(args, attr) for attr, key in keys.items()}
    return resolve_config(file_values, overrides)


def _cmd_prepare_data(args: argparse.Namespace) -> int:
    cfg = _resolved(args, {
        "seq_len": "seq_len", "copies": "copies", "mask_prob": "mask_prob",
        "val_fraction": "val_fraction", "seed": "seed", "shard_size": "shard_size",
    })
    manifest_cfg = {
        k: cfg[k] for k in ("seq_len", "copies", "mask_prob", "val_fraction", "seed", "shard_size")
    }
    manifest_cfg["input"] = str(Path(args.input))
    manifest_cfg["vocab"] = str(Path(args.vocab))
    if args.specials:
        manifest_cfg["specials"] = str(Path(args.specials))
    write_manifest(args.out, RunManifest(
        command="prepare-data", config=manifest_cfg, seeds=[cfg["seed"]],
        code_version=__version__, clock_mode="real", outputs=[str(Path(args.out))],
    ))
    vocab = load_vocab(args.vocab, args.specials)
    summary = prepare_corpus(
        args.input, vocab, args.out,
        seq_len=cfg["seq_len"], copies=cfg["copies"], mask_prob=cfg["mask_prob"],
        val_fraction=cfg["val_fraction"], seed=cfg["seed"], shard_size=cfg["shard_size"],
    )
    for key in ("documents", "sequence_instances", "train_instances", "val_instances",
                "masked_train_instances", "masked_val_instances"):
        _err(f"{key}={summary[key]}")
    _err(f"adjacent_same_copy_fraction={summary['adjacent_same_copy_fraction']:.4f}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolved(args, {
        "preset": "preset", "bsz": "bsz", "peak_lr": "peak_lr", "warmup": "warmup",
        "days_factor": "days_factor", "budget_seconds": "budget_seconds", "seed": "seed",
        "micro_bsz": "micro_bsz", "calib_steps": "calib_steps", "dtype": "dtype",
        "include_calibration_in_budget": "include_calibration_in_budget",
    })
    keys = ("preset", "bsz", "peak_lr", "warmup", "days_factor", "budget_seconds",
            "seed", "micro_bsz", "calib_steps", "dtype", "include_calibration_in_budget",
            "dropout", "attention_dropout", "weight_decay", "adam_beta1", "adam_beta2",
            "adam_eps", "grad_clip")
    manifest_cfg = {k: cfg[k] for k in keys}
    manifest_cfg["shards"] = str(Path(args.shards))
    write_manifest(args.out, RunManifest(
        command="train", config=manifest_cfg, seeds=[cfg["seed"]],
        code_version=__version__, clock_mode="real", outputs=[str(Path(args.out))],
    ))
    from .adamw import OptimizerHyper

    trainer = Trainer.from_shards(
        args.shards,
        preset=cfg["preset"],
        dropout=cfg["dropout"],
        attention_dropout=cfg["attention_dropout"],
        out_dir=args.out,
        bsz=cfg["bsz"],
        peak_lr=cfg["peak_lr"],
        warmup_proportion=cfg["warmup"],
        days_factor=cfg["days_factor"],
        budget_seconds=cfg["budget_seconds"],
        seed=cfg["seed"],
        micro_bsz=cfg["micro_bsz"],
        hyper=OptimizerHyper(
            beta1=cfg["adam_beta1"], beta2=cfg["adam_beta2"], eps=cfg["adam_eps"],
            weight_decay=cfg["weight_decay"], grad_clip=cfg["grad_clip"],
        ),
        dtype=_DTYPES[cfg["dtype"]],
        calib_steps=cfg["calib_steps"],
        calibration_excluded=not cfg["include_calibration_in_budget"],
    )
    status = trainer.run(run_until=args.run_until, max_steps=args.max_steps)
    _err(f"status={status} step={trainer.state.step} elapsed={trainer.elapsed:.1f}s")
    if trainer.last_val_loss is not None:
        _err(f"val_loss={trainer.last_val_loss:.6f}")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _resolved(args, {
        "preset": "preset", "seed": "seed", "micro_bsz": "micro_bsz",
        "budget_seconds": "budget_seconds", "slots": "slots",
    })
    if args.grid:
        space, _ = parse_grid_file(args.grid)
    else:
        from .sweep import SearchSpace

        space = SearchSpace()
    prune = PruneSchedule(
        checkpoint1_fraction=args.checkpoint1,
        loss_threshold=args.threshold,
        checkpoint2_fraction=args.checkpoint2,
        keep_fraction=args.keep_fraction,
    )
    manifest_cfg = {
        "preset": cfg["preset"], "seed": cfg["seed"], "micro_bsz": cfg["micro_bsz"],
        "budget_seconds": cfg["budget_seconds"], "slots": cfg["slots"],
        "shards": str(Path(args.shards)),
        "grid": str(Path(args.grid)) if args.grid else "(default)",
        "threshold": args.threshold, "keep_fraction": args.keep_fraction,
        "checkpoint1": args.checkpoint1, "checkpoint2": args.checkpoint2,
    }
    write_manifest(args.out, RunManifest(
        command="sweep", config=manifest_cfg, seeds=[cfg["seed"]],
        code_version=__version__, clock_mode="real", outputs=[str(Path(args.out))],
    ))
    grid = build_grid(space, cfg["seed"])
    runner = SubprocessTrialRunner(
        shard_root=args.shards,
        trials_root=Path(args.out) / "trials",
        budget_seconds=cfg["budget_seconds"],
        preset=cfg["preset"],
        seed=cfg["seed"],
        micro_bsz=cfg["micro_bsz"],
        threads_per_trial=args.threads_per_trial,
    )
    report = run_sweep(grid, cfg["budget_seconds"], cfg["slots"], prune, runner)
    out = Path(args.out)
    (out / "report.tsv").write_text(report.to_tsv(), encoding="utf-8")
    (out / "audit.log").write_text("\n".join(report.audit_lines) + "\n", encoding="utf-8")
    for line in report.to_tsv().splitlines()[:6]:
        _err(line)
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    if args.report_kind == "cost":
        hw = HardwareSpec(gpu_count=args.gpus, gpu_memory_gb=args.gpu_gb)
        gbh = gb_hours(hw, args.hours)
        if (args.rate_low is None) != (args.rate_high is None):
            raise ConfigError("provide both --rate-low and --rate-high, or neither")
        rates = (args.rate_low, args.rate_high) if args.rate_low is not None else None
        lo, hi = dollar_estimate(gbh, rates) if rates else dollar_estimate(gbh)
        print(f"gb_hours={gbh:.1f}")
        print(f"dollars_low={lo:.2f}")
        print(f"dollars_high={hi:.2f}")
        return 0
    records = []
    path = Path(args.throughput_log)
    if not path.exists():
        raise DataError(f"throughput log not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    for lineno, line in enumerate(lines, 1):
        if not line.strip() or line.startswith("#") or lineno == 1:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected label/bsz/samples_per_second")
        records.append(ThroughputRecord.for_target(
            parts[0], int(parts[1]), float(parts[2]), args.samples
        ))
    print(emit_table(records, args.samples))
    return 0


def replay_argv(out_dir: str | Path) -> list[str]:
    """Rebuild the argv that reproduces the run recorded in a manifest."""
    manifest = read_manifest(out_dir)
    argv = [manifest.command]
    for key, value in sorted(manifest.config.items()):
        if value in ("True", "False"):
            if value == "True":
                argv.append(f"--{key.replace('_', '-')}")
            continue
        argv.extend([f"--{key.replace('_', '-')}", value])
    argv.extend(["--out", str(out_dir)])
    return argv


_HANDLERS = {
    "prepare-data": _cmd_prepare_data,
    "train": _cmd_train,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
}


def dispatch(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _HANDLERS[args.command](args)
    except ConfigError as e:
        _err(f"configuration error: {e}")
        return 3
    except DataError as e:
        _err(f"data error: {e}")
        return 4
    except BudgetLMError as e:
        _err(f"runtime error: {e}")
        return 5


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
