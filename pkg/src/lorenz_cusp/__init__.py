"""Lorenz '63 Casimir-maxima return map, its invariant density and stability."""

__version__ = "0.1.0"
