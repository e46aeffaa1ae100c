"""Data-sharing incentive mechanisms for federated learning.

Accuracy models, agents, allocation mechanisms (pooled, known-cost shaping,
two-type shaping), equilibrium solvers, and a grid-search oracle.
"""

from .accuracy import INFINITE, AccuracyModel, FullBound, PowerLaw, SimpleBound, model_from_config
from .agents import (
    Agent,
    Population,
    TwoTypePrior,
    individual_optimum,
    individual_utility,
    utility,
    viability_threshold,
)
from .equilibrium import (
    EquilibriumResult,
    best_response,
    best_response_dynamics,
    closed_form_equilibrium,
    min_agents_for_viability,
    min_viability_total,
)
from .errors import DomainError, NonConvergenceError, ParameterError
from .mechanisms import (
    Mechanism,
    ShapingKnown,
    ShapingTwoType,
    StandardFederated,
    allocate,
    check_feasible,
    check_ir,
)

__version__ = "0.1.0"
