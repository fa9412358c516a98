#!/usr/bin/env python3
"""Track the agent composite score over a long multi-agent run.

Runs the configured multi_agent strategy for every seed and reports the
composite-score trend (mean of the last ten epochs minus mean of the first
ten), which should be strongly positive when the feedback loop is improving
its own dialogue while leaving model weights untouched.
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
        default=str(Path(__file__).resolve().parent.parent / "configs" / "agent_trend.json"),
    )
    parser.add_argument("--out-dir", default=None, help="override the configured out_dir")
    args = parser.parse_args()

    cfg = harness.load_config(args.config)
    if args.out_dir:
        cfg = replace(cfg, out_dir=args.out_dir)

    deltas = []
    for seed in cfg.seeds:
        rd = harness.run_strategy(cfg, seed)
        composites = []
        inert = []
        with open(Path(rd) / "epoch_reports.jsonl", encoding="utf-8") as fh:
            for line in fh:
                row = json.loads(line)
                composites.append(row["agent"]["composite"])
                inert.append(row["weight_inert"])
        head = float(np.mean(composites[:10]))
        tail = float(np.mean(composites[-10:]))
        deltas.append(tail - head)
        print(
            f"seed {seed}: first-10 {head:.3f} -> last-10 {tail:.3f} "
            f"(delta {tail - head:+.3f}, weight-inert {all(inert)})"
        )

    print(f"\nmean delta over {len(deltas)} seeds: {float(np.mean(deltas)):+.3f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
