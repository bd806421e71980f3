"""Render the six reproduction figures from clock-sync CSV exports."""

__version__ = "0.1.0"
