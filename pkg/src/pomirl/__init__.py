"""Inverse reinforcement learning in partially observable models with temporal-logic side information."""

from .flow import Policy, VisitationCounts, bellman_flow_solve, causal_entropy, spec_flow_solve
from .memory import Fsc, ProductPomdp, build_product, project_policy
from .model import FeatureBasis, Pomdp, RewardWeights, parse_model, validate
from .scp import ScpParams, ScpResult, SpecConstraint, scp_forward
from .spec import SpecFormula, compile_spec

__all__ = [
    "FeatureBasis", "Fsc", "Policy", "Pomdp", "ProductPomdp", "RewardWeights", "ScpParams", "ScpResult",
    "SpecConstraint", "SpecFormula", "VisitationCounts", "bellman_flow_solve", "build_product",
    "causal_entropy", "compile_spec", "parse_model", "project_policy", "scp_forward", "spec_flow_solve",
    "validate",
]
