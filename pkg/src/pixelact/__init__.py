"""Desk-scale behavior cloning laboratory."""

__version__ = "0.1.0"
