"""Masked-autoencoder hand-object pose estimation on procedurally generated scenes."""

__version__ = "0.1.0"
