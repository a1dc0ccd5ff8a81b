"""Optimal hybrid dividend payout in a two-regime Markov-modulated diffusion."""

__version__ = "0.1.0"
