"""Sketched least squares and instrumental-variable regression."""

__version__ = "0.1.0"
