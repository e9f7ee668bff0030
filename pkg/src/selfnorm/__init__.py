"""Self-normalized concentration bounds, mixture boundaries and Monte Carlo certification."""

__version__ = "0.1.0"

from .bounds import BoundValue, EventSpec, evaluate
from .exceptions import LogCapWarning, NumericalError, ParameterError, RegimeError, SelfNormError
from .lil import LilConstants, solve_h
from .mixtures import Boundary, DiscreteGrid, GaussianScale, RobbinsSiegmund, beta_f, log_psi, psi
from .montecarlo import BoundReport, SimulationConfig, estimate_event_probability, verify_supermartingale_mean
from .multivariate import MvPathState, mv_crossing_probability, mv_statistic, mv_threshold
from .processes import CanonicalRegime, GeneratorSpec, ProcessPath, generate_path

__all__ = [
    "__version__",
    "BoundReport",
    "BoundValue",
    "Boundary",
    "CanonicalRegime",
    "DiscreteGrid",
    "EventSpec",
    "GaussianScale",
    "GeneratorSpec",
    "LilConstants",
    "LogCapWarning",
    "MvPathState",
    "NumericalError",
    "ParameterError",
    "ProcessPath",
    "RegimeError",
    "RobbinsSiegmund",
    "SelfNormError",
    "SimulationConfig",
    "beta_f",
    "estimate_event_probability",
    "evaluate",
    "generate_path",
    "log_psi",
    "mv_crossing_probability",
    "mv_statistic",
    "mv_threshold",
    "psi",
    "solve_h",
    "verify_supermartingale_mean",
]
