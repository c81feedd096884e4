"""Exact and Monte-Carlo tools for random walks in space-time random environments."""

__version__ = "0.1.0"
