"""Geometric task networks: skill models, hybrid search, and online execution."""

__version__ = "0.1.0"
