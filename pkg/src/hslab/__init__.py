"""Numerical laboratory for doubly critical Hardy-Sobolev boundary problems."""
__version__ = "0.1.0"
