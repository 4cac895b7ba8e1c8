"""Exact and simulated waiting times of a server attending two service points.

Submodules
----------
distributions  service/preparation laws, transform derivatives, two-moment fits
alternating    stationary wait when the server alternates between the points
repair         stationary wait when it serves whichever point is ready first
simulator      coupled Monte-Carlo paths and regenerative estimators
experiments    sweep specs and CSV output used by the command line
"""

from .alternating import WaitLaw, solve_erlang, solve_phase_type
from .distributions import (
    Deterministic,
    Exponential,
    HyperExponential,
    MixedErlang,
    Moments,
    PrepLaw,
    fit_moments,
)
from .repair import build_chain, residual_law, solve_na

__version__ = "0.1.0"

__all__ = [
    "WaitLaw",
    "solve_erlang",
    "solve_phase_type",
    "Deterministic",
    "Exponential",
    "HyperExponential",
    "MixedErlang",
    "Moments",
    "PrepLaw",
    "fit_moments",
    "build_chain",
    "residual_law",
    "solve_na",
]
