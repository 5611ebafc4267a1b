"""Cyclic-conditional generative modelling laboratory."""

__version__ = "0.1.0"
