"""Relational concept-bottleneck models over first-order templates."""

__version__ = "0.1.0"
