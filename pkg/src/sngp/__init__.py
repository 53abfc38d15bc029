"""Spectral-normalized neural Gaussian process for small residual networks."""

__version__ = "0.1.0"
