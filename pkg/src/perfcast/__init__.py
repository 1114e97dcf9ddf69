"""Analytical performance model for distributed transformer training and inference."""

__version__ = "0.1.0"
