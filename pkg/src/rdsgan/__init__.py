"""Rank-based distant-supervision GAN for relation extraction."""

__version__ = "0.1.0"
