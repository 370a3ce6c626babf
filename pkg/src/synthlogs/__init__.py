"""Parametric debarked-log models: fitting, statistics and synthetic generation."""

from ._accel import backend

__version__ = "0.1.0"
__all__ = ["backend", "__version__"]
