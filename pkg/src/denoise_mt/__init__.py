"""Desk-scale translation pipeline with denoising pretraining."""

__version__ = "0.1.0"
