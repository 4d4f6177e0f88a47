"""Numerical lab for two-layer networks after one large gradient step."""

__version__ = "0.1.0"
