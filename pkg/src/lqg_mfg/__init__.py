"""Numerical lab for linear-quadratic mean-field games with common noise."""

__version__ = "0.1.0"

from .params import ConfigurationError, InitialLawSpec, ModelParams, TimeGrid
from .riccati import RiccatiTable, solve_riccati
from .dynamics import build_kernels, draw_noise, simulate_nplayer
from .transport import EmpiricalMeasure1D, Law1D, wp_empirical

__all__ = [
    "ConfigurationError", "InitialLawSpec", "ModelParams", "TimeGrid",
    "RiccatiTable", "solve_riccati", "build_kernels", "draw_noise", "simulate_nplayer",
    "EmpiricalMeasure1D", "Law1D", "wp_empirical",
]
