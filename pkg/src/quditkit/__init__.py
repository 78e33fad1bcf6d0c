"""Simulation and analysis toolkit for a spin-j qudit encoded in a transmon."""

__version__ = "0.1.0"
