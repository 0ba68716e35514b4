#!/usr/bin/env python3
"""Run the full runtime verification battery (lemmas, loss threshold,
Markov and stability bounds, gradient checks) and print the table."""

import sys

from adaptcl.cli import main

if __name__ == "__main__":
    sys.exit(main(["verify", "--seed", "0"]))
