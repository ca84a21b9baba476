"""Stokes geometry, formal invariants and Stokes data of meromorphic connections."""

__version__ = "0.1.0"
