#!/usr/bin/env python3
"""Sweep the number of adaptation epochs and print the aggregate."""

import sys
from pathlib import Path

from adaptcl.cli import main

ROOT = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "out/epoch_sweep"
    code = main(
        [
            "sweep",
            "--config",
            str(ROOT / "configs" / "default.cfg"),
            "--axis",
            "epochs",
            "--values",
            "1,2,4",
            "--out",
            out,
        ]
    )
    agg = Path(out) / "sweep.csv"
    if agg.exists():
        print(agg.read_text())
    sys.exit(code)
