"""Stabilizing functionals on marked point processes."""

__version__ = "0.1.0"
