"""Desk-scale laboratory for SVD preprocessing effects in contrastive learning."""

__version__ = "0.1.0"
