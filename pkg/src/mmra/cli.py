"""Command-line entry point.

Subcommands:
    synth    generate synthetic modality CSVs from a config
    train    run one strategy for one seed
    repeat   run every configured seed and aggregate
    compare  significance report over finished run directories
    zeroday  leave-one-family-out evaluation with abstention
    export   CSV views of a run directory

Exit codes: 0 success, 2 configuration error, 3 data error, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import dataset as ds_mod
from . import harness
from .dataset import DatasetError
from .harness import ConfigError, RunError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmra",
        description="Multimodal ransomware family analysis pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="write synthetic modality CSVs")
    p_synth.add_argument("--config", required=True, help="run configuration JSON")
    p_synth.add_argument("--out", required=True, help="output directory for the CSVs")
    p_synth.add_argument("--seed", type=int, default=None, help="override the first configured seed")

    p_train = sub.add_parser("train", help="run one strategy for one seed")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--strategy", default=None, help="override the configured strategy")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.add_argument("--out-dir", default=None)
    p_train.add_argument("--agent-mode", choices=("fallback", "llm"), default=None)

    p_repeat = sub.add_parser("repeat", help="run all configured seeds and aggregate")
    p_repeat.add_argument("--config", required=True)
    p_repeat.add_argument("--strategy", default=None)
    p_repeat.add_argument("--seeds", default=None, help="comma-separated seed list override")
    p_repeat.add_argument("--out-dir", default=None)

    p_compare = sub.add_parser("compare", help="significance tests over run directories")
    p_compare.add_argument("--runs", nargs="+", required=True, help="finished run directories")
    p_compare.add_argument("--out", default=None, help="optional JSON report path")

    p_zeroday = sub.add_parser("zeroday", help="leave-one-family-out evaluation")
    p_zeroday.add_argument("--config", required=True)
    p_zeroday.add_argument("--holdout", required=True, help="family name to quarantine")
    p_zeroday.add_argument(
        "--mode",
        choices=("near", "far"),
        default=None,
        help="synthesize the holdout next to a trained family (near) or with a "
        "single non-identifying view and the other modalities absent (far); "
        "requires synthetic data",
    )
    p_zeroday.add_argument("--anchor", default=None, help="anchor family for --mode near")
    p_zeroday.add_argument("--tau", type=float, default=None, help="abstention threshold override")
    p_zeroday.add_argument("--seed", type=int, default=None)
    p_zeroday.add_argument("--out-dir", default=None)

    p_export = sub.add_parser("export", help="write CSV views of a run directory")
    p_export.add_argument("--run", required=True, help="run directory")

    return parser


def _apply_overrides(cfg: harness.StrategyConfig, args: argparse.Namespace) -> harness.StrategyConfig:
    from dataclasses import replace

    updates = {}
    if getattr(args, "strategy", None):
        updates["strategy"] = args.strategy
    if getattr(args, "epochs", None) is not None:
        updates["epochs"] = args.epochs
    if getattr(args, "out_dir", None):
        updates["out_dir"] = args.out_dir
    if getattr(args, "agent_mode", None):
        updates["agent_mode"] = args.agent_mode
    if getattr(args, "seed", None) is not None:
        updates["seeds"] = (args.seed,)
    if getattr(args, "seeds", None):
        updates["seeds"] = tuple(int(s) for s in args.seeds.split(","))
    if getattr(args, "tau", None) is not None:
        updates["abstain_tau"] = args.tau
    return replace(cfg, **updates) if updates else cfg


def _cmd_synth(args: argparse.Namespace) -> int:
    cfg = harness.load_config(args.config)
    if not isinstance(cfg.data, ds_mod.SynthConfig):
        raise ConfigError("synth requires a configuration with synthetic data")
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    data_seed = harness._derived_seeds(seed)["data"]
    static, dynamic, network = ds_mod.synth_generate(cfg.data, data_seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for table in (static, dynamic, network):
        path = out / f"{table.modality}.csv"
        ds_mod.save_modality_csv(table, str(path))
        print(f"wrote {path} ({len(table.sample_hashes)} rows)")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(harness.load_config(args.config), args)
    run_dir = harness.run_strategy(cfg, cfg.seeds[0])
    with open(run_dir / "final_summary.json", "r", encoding="utf-8") as fh:
        summary = json.load(fh)
    test = summary["test"]
    print(f"run dir: {run_dir}")
    print(
        f"test macro_f1={test['macro_f1']:.4f} accuracy={test['accuracy']:.4f} "
        f"ece={test['ece']:.4f} nll={test['nll']:.4f}"
    )
    return 0


def _cmd_repeat(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(harness.load_config(args.config), args)
    summary = harness.run_repeats(cfg)
    print(f"strategy: {summary['strategy']}  seeds: {summary['seeds']}")
    for metric, stats in summary["metrics"].items():
        print(f"{metric}: {stats['mean']:.4f} +- {stats['std']:.4f}")
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    report = harness.compare_strategies(args.runs)
    print(harness.comparison_table(report))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
        print(f"wrote {args.out}")
    return 0


def _cmd_zeroday(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(harness.load_config(args.config), args)
    if args.mode is not None:
        if not isinstance(cfg.data, ds_mod.SynthConfig):
            raise ConfigError("--mode requires synthetic data")
        from dataclasses import replace

        synthetic = harness.make_zero_day_synth(
            cfg.data, args.holdout, args.mode, anchor=args.anchor, benign_label=cfg.benign_label
        )
        cfg = replace(cfg, data=synthetic)
    report = harness.zero_day_eval(cfg, args.holdout)
    best = report["best"] or {}
    final = report["final"]
    print(f"run dir: {report['run_dir']}")
    print(
        f"holdout={report['holdout']} best_f1={best.get('binary_macro_f1')} "
        f"final coverage={final['coverage']:.4f} "
        f"abstention={final['abstention_rate']:.4f} kept_accuracy={final['kept_accuracy']}"
    )
    audit = report["audit"]
    print(
        f"audit: holdout_in_train={audit['holdout_in_train']} "
        f"holdout_in_calibration={audit['holdout_in_calibration']}"
    )
    return 0


def _cmd_export(args: argparse.Namespace) -> int:
    out = harness.export_reports(args.run)
    with open(out / "MANIFEST.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    status = "partial" if manifest["partial"] else "complete"
    print(f"exported {len(manifest['files'])} files to {out} ({status} run)")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "repeat": _cmd_repeat,
    "compare": _cmd_compare,
    "zeroday": _cmd_zeroday,
    "export": _cmd_export,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except RunError as exc:
        print(f"run error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
