"""Market clearing for natural-gas/hydrogen blend pipeline networks."""

from .domain import (
    Bid,
    Compressor,
    DEFAULT_CONSTANTS,
    GasConstants,
    GNode,
    GNodeKind,
    MarketScenario,
    Network,
    NetworkValidationError,
    Node,
    Offer,
    Pipe,
    avoided_emissions,
    calorific_value,
    carbon_intensity,
    validate_network,
    validate_scenario,
)
from .nlp import NlpProblem, ObjectiveBreakdown, assemble
from .scaling import ScalingBasis, nondimensionalize, redimensionalize_solution
from .solver import Solution, SolveOptions, SolveStatus, solve

__version__ = "0.1.0"
