"""Exact simulation and verification of measurement-feedback thermodynamics."""

__version__ = "0.1.0"
