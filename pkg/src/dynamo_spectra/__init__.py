"""Numerical spectral theory of the smooth Ponomarenko slow dynamo."""

from . import discrete, gilbert, greens, profiles, specfun

__version__ = "0.1.0"
__all__ = ["discrete", "gilbert", "greens", "profiles", "specfun"]
