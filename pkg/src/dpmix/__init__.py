"""Dirichlet process mixtures of exponential-family components for novelty detection."""

__version__ = "0.1.0"
