"""Numerical toolkit for non-smooth critical point theory on spheres and flat tori."""

__version__ = "0.1.0"

from .geometry import DomainError, ConvergenceError  # noqa: F401
