"""Survival extrapolation from trial data with registry support."""

__version__ = "0.1.0"
