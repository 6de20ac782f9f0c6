"""Signature perturbation analysis of a two-factor commodity futures model."""

__version__ = "0.1.0"
