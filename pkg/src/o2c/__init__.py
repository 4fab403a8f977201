"""Simulator for on-the-fly kernel compartmentalization."""

__version__ = "0.1.0"
