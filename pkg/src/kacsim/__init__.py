"""Exact simulation and diagnostics of Kac's particle system with soft potentials and angular singularity."""

__version__ = "0.1.0"
