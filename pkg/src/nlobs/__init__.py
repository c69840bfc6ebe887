"""Adaptive observers for nonlinearly parameterized systems with parametric constraints."""

__version__ = "0.1.0"
