"""Poisson-bracket rigidity laboratory on 2D symplectic grids."""

__version__ = "0.1.0"
