"""Numerical laboratory for lower deviations of the branching Brownian motion maximum."""

__version__ = "0.1.0"
