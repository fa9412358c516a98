#!/usr/bin/env python3
"""Run all seven strategies over the configured seeds and compare them.

Writes one run directory per (strategy, seed) under the configured out_dir,
then prints per-strategy mean test scores and the significance report
(Wilcoxon signed-rank on the paired seed scores, Friedman across all
strategies).
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from mmra import harness


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--config",
        default=str(Path(__file__).resolve().parent.parent / "configs" / "strategy_comparison.json"),
    )
    parser.add_argument("--out-dir", default=None, help="override the configured out_dir")
    args = parser.parse_args()

    base = harness.load_config(args.config)
    if args.out_dir:
        base = replace(base, out_dir=args.out_dir)

    run_dirs: list[str] = []
    scores: dict[str, list[float]] = {}
    for strategy in harness.STRATEGIES:
        cfg = replace(base, strategy=strategy, run_name=strategy)
        per_seed = []
        for seed in cfg.seeds:
            rd = harness.run_strategy(cfg, seed)
            run_dirs.append(str(rd))
            with open(Path(rd) / "final_summary.json", encoding="utf-8") as fh:
                summary = json.load(fh)
            per_seed.append(summary["test"]["macro_f1"])
        scores[strategy] = per_seed
        print(f"{strategy:>14}: mean macro-F1 {np.mean(per_seed):.3f}  seeds {[round(s, 3) for s in per_seed]}")

    report = harness.compare_strategies(run_dirs)
    print()
    print(harness.comparison_table(report))

    report_path = Path(base.out_dir) / "comparison.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    print(f"\nreport written to {report_path}")

    modality_means = {
        s: float(np.mean(scores[s])) for s in ("static_only", "dynamic_only", "network_only")
    }
    best_modality = max(modality_means.values())
    multi = float(np.mean(scores["multi_agent"]))
    single = float(np.mean(scores["single_agent"]))
    print(
        f"\nmulti_agent {multi:.3f} vs single_agent {single:.3f} "
        f"vs best single modality {best_modality:.3f} "
        f"(multimodal margin {multi - best_modality:+.3f})"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
