"""Weakly-supervised shadow removal: generation, removal, refinement."""

__version__ = "0.1.0"
