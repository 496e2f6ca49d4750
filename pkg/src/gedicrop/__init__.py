"""Tall/short crop mapping from spaceborne-lidar RH metrics and optical harmonics."""

__version__ = "0.1.0"
