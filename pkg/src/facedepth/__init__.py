"""Conditional-adversarial facial depth-map estimation."""

__version__ = "0.1.0"
