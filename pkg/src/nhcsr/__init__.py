"""Numerical homogenization by continuous super-resolution."""

__version__ = "0.1.0"
