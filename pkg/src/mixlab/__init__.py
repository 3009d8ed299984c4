"""Numerical laboratory for reacting, non-diffusive mixtures in an incompressible flow."""

__version__ = "0.1.0"
