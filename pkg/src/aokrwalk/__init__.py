"""Quantum walks of a two-level kicked rotor with spontaneous emission."""

__version__ = "0.1.0"
