"""Numerical laboratory for Laplacian and elliptic growth in the plane."""

__version__ = '0.2.0'
