"""Parametric optimization stability probe."""

__version__ = "0.1.0"
__author__ = "Optimization Team"
__description__ = "Numerical diagnostics for tilt, full and sub-stability of parametric minimization"
