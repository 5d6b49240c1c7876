"""Desk-scale laboratory for perturbations of shrinking Ricci solitons."""

__version__ = "0.1.0"
