"""Continuous photon counting in a lossless cavity: SD and E quantum-jump models."""

__version__ = "0.1.0"
