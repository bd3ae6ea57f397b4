"""Closed-loop encode / substrate / decode / feedback simulator and parameter screening."""

__version__ = "0.1.0"
