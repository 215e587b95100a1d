"""Energy-aware placement of AI-model service chains under demand uncertainty."""
from .domain import (AIModelProfile, HostSpec, Placement, Scenario, ScenarioError, ServiceChain,
                     generate_request, load_scenario, make_chain)
from .evaluator import RealizedDemand, acceptance_ratio, check_constraints, energy
from .policy import PolicyConfig, PolicyParameters, place
from .solvers import SolveResult, branch_and_bound, brute_force, first_fit
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train_policy

__all__ = [
    "AIModelProfile", "HostSpec", "Placement", "Scenario", "ScenarioError", "ServiceChain",
    "generate_request", "load_scenario", "make_chain", "RealizedDemand", "acceptance_ratio",
    "check_constraints", "energy", "PolicyConfig", "PolicyParameters", "place", "SolveResult",
    "branch_and_bound", "brute_force", "first_fit", "TrainConfig", "load_checkpoint",
    "save_checkpoint", "train_policy",
]
__version__ = "0.1.0"
