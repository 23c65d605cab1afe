"""Numerical laboratory for stochastic homogenization of L-infinity variational problems."""

__version__ = "0.1.0"
