"""Closed-loop disaster-response simulation and swarm dispatch optimization."""

from .accel import NUMBA_ENABLED

__version__ = "0.1.0"

__all__ = ["NUMBA_ENABLED", "__version__"]
