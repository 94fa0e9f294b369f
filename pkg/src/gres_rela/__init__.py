"""Generalized referring expression segmentation with region-based relationship modeling."""

__version__ = "0.1.0"
