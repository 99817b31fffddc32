"""Subordinate killed Brownian motion on boxes: spectral operators, kernels,
boundary blow-up solutions of semilinear problems and Monte Carlo checks."""

__version__ = "0.1.0"
