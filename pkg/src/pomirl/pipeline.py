"""Glue between specs, memory products and the solvers (shared by the CLI and scripts)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flow import Policy
from .irl import DemoSet, IrlParams, IrlResult, irl_loop
from .memory import Fsc, ProductPomdp, build_product, project_policy
from .model import FeatureBasis, Pomdp
from .scp import ScpParams, ScpResult, SpecConstraint, scp_forward
from .sim import fsc_value, policy_value
from .spec import SpecFormula, compile_spec


@dataclass(frozen=True, eq=False)
class Problem:
    """A learner's view of a model: optional spec compilation, then optional memory product.

    ``base`` is the original model (where demos, evaluation and features live);
    ``work`` is the model the solver runs on.
    """

    base: Pomdp
    features: FeatureBasis
    memory: int
    formula: SpecFormula | None
    product: ProductPomdp | None
    work: Pomdp
    work_features: FeatureBasis
    spec: SpecConstraint | None

    @property
    def learner(self) -> Pomdp | ProductPomdp:
        return self.product if self.product is not None else self.work


def make_problem(p: Pomdp, features: FeatureBasis, memory: int = 1, formula: SpecFormula | None = None) -> Problem:
    """The solver keeps the dynamics of ``p``; a spec only adds target and blocked sets."""
    compiled = compile_spec(p, formula) if formula is not None else None
    if memory > 1:
        pp = build_product(p, memory)
        work, wf = pp.product, pp.lift_features(features)
        spec = None
        if compiled is not None:

            def lift(states):
                return frozenset(np.flatnonzero(np.isin(pp.state_base, list(states))).tolist())

            spec = SpecConstraint(lift(compiled.target), compiled.lam, lift(compiled.blocked))
        return Problem(p, features, memory, formula, pp, work, wf, spec)
    spec = SpecConstraint(compiled.target, compiled.lam, compiled.blocked) if compiled is not None else None
    return Problem(p, features, 1, formula, None, p, features, spec)


def base_policy(problem: Problem, policy: Policy) -> Policy | Fsc:
    """Express a working-model policy on the original model (an FSC when memory > 1)."""
    if problem.product is None:
        return policy
    return project_policy(problem.product, policy)


def forward(problem: Problem, theta, params: ScpParams = ScpParams(), init: Policy | None = None, callback=None):
    res = scp_forward(problem.work, problem.work_features, theta, init, problem.spec, params, callback=callback)
    return base_policy(problem, res.policy), res


def learn(problem: Problem, demos: DemoSet, params: IrlParams = IrlParams(), callback=None) -> tuple[Policy | Fsc, IrlResult]:
    res = irl_loop(problem.learner, problem.features, demos, problem.spec, params, callback=callback)
    return base_policy(problem, res.policy), res


def true_value(p: Pomdp, policy: Policy | Fsc, theta, features: FeatureBasis, horizon: int = 100) -> float:
    """Exact expected accumulated reward over ``horizon`` steps on the original model."""
    if isinstance(policy, Fsc):
        return fsc_value(build_product(p, policy.memory_size), policy, theta, features, horizon)
    return policy_value(p, policy, theta, features, horizon)
