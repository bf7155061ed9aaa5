"""Sparse autoencoders for reduced-order modelling trained with linearized Bregman iterations."""

__version__ = "0.1.0"
