"""Continuous-measurement thermometry with a two-level probe."""

__version__ = "0.1.0"
