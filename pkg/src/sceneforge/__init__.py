"""Desk-scale 3D-grounded visual compositing pipeline."""

__version__ = "0.1.0"
