"""Implicit time discretization of a parabolic-hyperbolic phase-field system."""

__version__ = "0.1.0"
