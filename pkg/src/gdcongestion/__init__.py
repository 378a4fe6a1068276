"""Congestion games, identical-interest polytensor games and gradient-descent fixed points, in exact arithmetic."""

__version__ = "0.1.0"
