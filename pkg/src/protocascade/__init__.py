"""Cascade simulation under different diffusion protocols, with structural analysis."""

__version__ = "0.1.0"
