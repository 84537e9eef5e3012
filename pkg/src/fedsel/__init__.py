"""Federated learning simulator with attention-based client selection."""

__version__ = "0.1.0"
