"""Steady-state simulation and design of dense-phase CO2 pipeline networks."""

__version__ = "0.1.0"
