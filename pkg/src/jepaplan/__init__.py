"""Latent world models with value-aligned embeddings for goal-reaching control."""

__version__ = "0.1.0"
