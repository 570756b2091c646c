"""Simulation and analysis of a two-particle, four-mode atom interferometer."""

__version__ = "0.1.0"
