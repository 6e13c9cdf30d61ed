"""Invariant-manifold atlases and homoclinic connections for the planar
equilateral circular restricted four-body problem."""

__version__ = "0.1.0"
