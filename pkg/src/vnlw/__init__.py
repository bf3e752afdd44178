"""Numerical laboratory for the viscous nonlinear wave equation."""

__version__ = "0.1.0"
