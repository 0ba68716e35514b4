"""Desk-scale continual learning with a pre-task backbone adaptation phase,
runtime verification of its theoretical guarantees, and a benchmark CLI."""

__version__ = "0.1.0"
