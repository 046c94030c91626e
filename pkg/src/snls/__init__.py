"""Pathwise pseudo-spectral simulation of Schrödinger equations with linear multiplicative noise."""

__version__ = "0.1.0"
