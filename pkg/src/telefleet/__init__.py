"""Desk-scale teleoperation fleet toolkit."""

__version__ = "0.1.0"
