"""Respiratory sound classification from lung-sound audio fused with metadata text."""

__version__ = "0.1.0"
