"""Simulation and analysis of randomized multichannel neighbor discovery."""

__version__ = "0.1.0"
