"""Routed multi-expert medication recommendation with knowledge-grounded safety checks."""

__version__ = "0.1.0"
