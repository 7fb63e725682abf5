"""Sequence VAE toolkit."""
