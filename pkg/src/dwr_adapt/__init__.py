"""Goal-oriented adaptive finite elements with dual weighted residual error estimation."""

__version__ = "0.1.0"
