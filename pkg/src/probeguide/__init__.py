"""Probe guidance on a synthetic phantom: pose algebra, slice rendering,
demonstration datasets, a small autodiff stack, imitation-learned guidance
with a latent world model, evaluation, and a live steering service."""

__version__ = "0.1.0"
