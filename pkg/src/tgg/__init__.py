"""Temporal graph generation evaluation harness."""

__version__ = "0.1.0"
