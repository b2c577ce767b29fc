"""Potts model with Kac interactions: mean-field theory, coarse graining, contours and checks."""

__version__ = "0.1.0"
