"""Averaging process, Sharing-a-Drink duality and Monte Carlo checks on graphs."""

__version__ = "0.1.0"
