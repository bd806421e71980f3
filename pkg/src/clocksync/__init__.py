"""Decentralized clock synchronization: simulator and certificate engine."""

__version__ = "0.1.0"
