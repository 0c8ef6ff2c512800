"""Loewner evolutions driven by Lévy processes: simulation and numerical checks."""

__version__ = "0.1.0"
