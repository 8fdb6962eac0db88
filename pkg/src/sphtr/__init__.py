"""Transformer classification of spherical signals sampled on polyhedral grids."""

__version__ = "0.1.0"
