"""Perceptual grouping of curvilinear structures in a 5-D lifted space."""

__version__ = "0.1.0"
