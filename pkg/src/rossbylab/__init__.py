"""Spectral laboratory for the rotating compressible multiscale limit."""

__version__ = "0.1.0"
