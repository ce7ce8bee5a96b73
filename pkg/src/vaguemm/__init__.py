"""Vague convergence of measures on marked metric measure spaces.

Finite mmm-spaces, monomials, Prohorov and Gromov-Prohorov distances,
laws on spaces with their vague metric, moment measures, Galton-Watson
genealogies and convergence diagnostics.
"""

__version__ = "0.1.0"

from .errors import (
    BudgetExceeded,
    DegenerateGrid,
    InvalidMetric,
    NonPositiveMoment,
    PreconditionViolated,
    UnboundedTestFunction,
    VagueMMError,
    ZeroMass,
)
from .mmm_core import FiniteMmmSpace, canonicalize, normalize, restrict, total_mass

__all__ = [
    "BudgetExceeded",
    "DegenerateGrid",
    "FiniteMmmSpace",
    "InvalidMetric",
    "NonPositiveMoment",
    "PreconditionViolated",
    "UnboundedTestFunction",
    "VagueMMError",
    "ZeroMass",
    "canonicalize",
    "normalize",
    "restrict",
    "total_mass",
]
