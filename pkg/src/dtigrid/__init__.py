"""Tract-level FA values on a 9x9 grid, disentangled VAE embeddings, and
evaluation metrics."""

__version__ = "0.1.0"
