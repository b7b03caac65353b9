"""Desk-scale diffusion denoising ranking optimization on toy 2-D worlds."""

__version__ = "0.1.0"
