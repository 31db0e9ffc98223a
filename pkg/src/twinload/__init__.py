"""Trace-driven simulator of twin-load memory extension over DDRx."""

__version__ = "0.1.0"
