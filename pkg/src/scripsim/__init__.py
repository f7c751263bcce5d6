"""Scrip-system equilibria, money supply, simulation and strategy inference."""
from .bestreply import EnvironmentRates, EquilibriumResult, best_reply_profile, best_threshold, find_equilibrium, value_iteration
from .core import (
    DEFAULT_TOLERANCES,
    INFINITE,
    AgentType,
    Population,
    ScripError,
    StrategyMix,
    ToleranceConfig,
    load_population,
    two_cost_population,
    validate_population,
)
from .inference import (
    ObservedDistribution,
    calibrate_type,
    enumerate_explanations,
    minimal_explanation,
    reconstruct_mix,
)
from .maxent import MaxEntSolution, build_distribution, entropy_of, solve_lambda
from .simulator import SimConfig, SimResult, compare_to_prediction, exact_chain, run_simulation
from .welfare import crash_threshold, sweep_altruists, sweep_hoarders, sweep_money, welfare_rate

__version__ = "0.1.0"
