"""Simulation and analysis of fiber-distributed hybrid polarization / vector-vortex entanglement."""

__version__ = "0.1.0"
