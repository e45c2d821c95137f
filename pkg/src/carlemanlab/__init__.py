"""Numerical laboratory for Carleman estimates and the stability of inverse source problems."""

__version__ = "0.1.0"

from .exceptions import ConfigViolation, LabError, NumericalFailure
from .geometry import DomainSpec, compute_gamma, construct_d
from .weights import CarlemanConstants, WeightParams
from .solvers import Coefficients, SourceSpec, SpaceTimeField, solve_heat, solve_wave_ibvp
from .carleman import check_lemma1, check_lemma2
from .harness import EnsembleSpec, StabilityReport
from .reconstruction import InverseProblemSpec, SourceReconstructor

__all__ = [
    "__version__",
    "CarlemanConstants",
    "Coefficients",
    "ConfigViolation",
    "DomainSpec",
    "EnsembleSpec",
    "InverseProblemSpec",
    "LabError",
    "NumericalFailure",
    "SourceReconstructor",
    "SourceSpec",
    "SpaceTimeField",
    "StabilityReport",
    "WeightParams",
    "check_lemma1",
    "check_lemma2",
    "compute_gamma",
    "construct_d",
    "solve_heat",
    "solve_wave_ibvp",
]
