"""Numerics for SDEs driven by fractional Brownian motion with H < 1/2."""

__version__ = "0.1.0"
