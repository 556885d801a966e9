"""Monte Carlo and PDE tools for reflecting diffusions with Robin boundary weights."""

from .errors import RobinMCError
from .geometry import Annulus, Ball, HalfLine, Interval, make_domain
from .drift import DriftField, make_drift
from .stochastics import McEstimate, McParams, simulate_ensemble

__version__ = "0.1.0"

__all__ = [
    "Annulus",
    "Ball",
    "DriftField",
    "HalfLine",
    "Interval",
    "McEstimate",
    "McParams",
    "RobinMCError",
    "make_domain",
    "make_drift",
    "simulate_ensemble",
]
