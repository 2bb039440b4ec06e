"""Adaptive localized model order reduction for diffusion-reaction problems."""

__version__ = "0.1.0"
