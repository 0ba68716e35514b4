#!/usr/bin/env python3
"""Run the default domain-gap benchmark (adaptation on vs frozen baseline,
5 seeds) and print the resulting metrics table."""

import sys
from pathlib import Path

from adaptcl.cli import main

ROOT = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "out/default"
    code = main(["run", "--config", str(ROOT / "configs" / "default.cfg"), "--out", out])
    metrics = Path(out) / "metrics.csv"
    if metrics.exists():
        print(metrics.read_text())
    sys.exit(code)
