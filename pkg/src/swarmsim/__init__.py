"""Deterministic differential-drive swarm simulation toolkit."""

__version__ = "0.1.0"
