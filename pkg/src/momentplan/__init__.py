"""Risk-bounded trajectory optimization through exact moment propagation."""
__version__ = "0.1.0"

from .expr import MtpExpression, Symbol, Tag, parse
from .nlp import NlpProblem, Scenario, assemble
from .propagation import build_augmented_basis, build_moment_system, initial_moments, propagate
from .solver import SolveResult, SolverOptions, Status, solve

__all__ = [
    "MtpExpression", "Symbol", "Tag", "parse", "NlpProblem", "Scenario", "assemble",
    "build_augmented_basis", "build_moment_system", "initial_moments", "propagate",
    "SolveResult", "SolverOptions", "Status", "solve",
]
