#!/usr/bin/env python3
"""Sweep the contrastive temperature over the standard grid and print the
aggregated per-value results."""

import sys
from pathlib import Path

from adaptcl.cli import main

ROOT = Path(__file__).resolve().parent.parent
GRID = "0.02,0.05,0.1,0.2,0.5"

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "out/temperature_sweep"
    code = main(
        [
            "sweep",
            "--config",
            str(ROOT / "configs" / "default.cfg"),
            "--axis",
            "temperature",
            "--values",
            GRID,
            "--out",
            out,
        ]
    )
    agg = Path(out) / "sweep.csv"
    if agg.exists():
        print(agg.read_text())
    sys.exit(code)
