"""Gradient plasticity with a monotone flow rule on structured 3-D grids."""
__version__ = "0.1.0"
