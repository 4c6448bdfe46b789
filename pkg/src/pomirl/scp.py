"""Trust-region sequential convex programming for the max-causal-entropy forward problem.

Each iteration linearizes the causal entropy and the bilinear policy constraint
``nu = mu * (O sigma)`` around the current (verified) policy, solves the resulting
LP inside a multiplicative trust region, and keeps the candidate only if its
*recomputed* objective does not decrease.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .flow import (
    Policy,
    SpecVisitation,
    VisitationCounts,
    bellman_flow_solve,
    realized_cost,
    spec_flow_solve,
    spec_penalty,
    SPEC_EPSILON,
)
from .lp import BACKENDS, LpProblem, WarmStart, solve_lp
from .model import FeatureBasis, Pomdp, RewardWeights

log = logging.getLogger(__name__)

POLICY_FLOOR = 1e-9


@dataclass(frozen=True)
class ScpParams:
    beta: float = 1e3
    beta_sp: float = 10.0
    rho_init: float = 1.01
    rho0: float = 1.5
    rho_lim: float = 1e-4
    max_iters: int = 300
    gamma: float | None = None
    stall_tol: float = 1e-6
    stall_steps: int = 5
    backend: str = "highs-warm"

    def __post_init__(self):
        if self.beta < 0 or self.beta_sp < 0:
            raise ValueError("penalty coefficients must be nonnegative")
        if self.rho_init <= 1 or self.rho0 <= 1:
            raise ValueError("rho_init and rho0 must exceed 1")
        if not 0 < self.rho_lim < self.rho_init - 1:
            raise ValueError("rho_lim must lie in (0, rho_init - 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.gamma is not None and not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown LP backend {self.backend!r}")


@dataclass(frozen=True)
class SpecConstraint:
    """Reach ``target`` before any ``blocked`` state with probability at least ``lam``.

    Both sets index states of the solver's working model.
    """

    target: frozenset
    lam: float
    blocked: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "target", frozenset(int(s) for s in self.target))
        object.__setattr__(self, "blocked", frozenset(int(s) for s in self.blocked))
        if not self.target:
            raise ValueError("spec target set must be nonempty")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class Linearization:
    """The verified point an LP is built around."""

    policy: Policy
    counts: VisitationCounts
    spec: SpecVisitation | None = None


@dataclass
class ScpResult:
    policy: Policy
    counts: VisitationCounts
    spec_visitation: SpecVisitation | None
    cost: float
    cost_trace: list[float]
    log: list[dict] = field(default_factory=list)
    status: str = "converged"
    seconds: float = 0.0


class ScpAbort(RuntimeError):
    """LP failure; ``partial`` holds the last accepted solution and the iteration log."""

    def __init__(self, message: str, partial: ScpResult):
        super().__init__(message)
        self.partial = partial


def _policy_rows(p: Pomdp):
    """COO pieces of the map sigma -> pi = O sigma, one row per (s, a)."""
    O = p.observation_fn.tocoo()
    A = p.n_actions
    rows = (O.row[:, None] * A + np.arange(A)[None, :]).ravel()
    cols = (O.col[:, None] * A + np.arange(A)[None, :]).ravel()
    vals = np.repeat(O.data, A)
    return rows, cols, vals


def build_linearized_lp(
    p: Pomdp,
    features: FeatureBasis,
    theta,
    prev: Linearization,
    rho: float,
    spec: SpecConstraint | None = None,
    params: ScpParams = ScpParams(),
) -> LpProblem:
    """The LP solved in one trust-region step around ``prev``.

    ``rho`` is the multiplicative trust radius: sigma is boxed to
    [sigma_hat / rho, sigma_hat * rho] intersected with [0, 1]. Slack on the
    linearized policy constraint is split into nonnegative parts, each penalized
    by ``beta``.
    """
    S, A = p.n_states, p.n_actions
    enabled = p.enabled
    zen = p.observation_enabled
    gamma = p.discount
    sig_hat = prev.policy.sigma
    pi_hat = prev.policy.state_policy(p)
    mu_hat = prev.counts.mu
    reward = features.reward(theta)

    log_pi = np.log(np.where(pi_hat > 0, pi_hat, 1.0))
    lp = LpProblem()
    mu = lp.add_variables("mu", S, objective=pi_hat.sum(axis=1))
    nu = lp.add_variables(
        "nu", (S, A), upper=np.where(enabled, np.inf, 0.0),
        objective=np.where(enabled, -(log_pi + 1.0) + reward, 0.0),
    )
    lo = np.where(zen, np.maximum(0.0, sig_hat / rho), 0.0)
    hi = np.where(zen, np.minimum(1.0, sig_hat * rho), 0.0)
    sigma = lp.add_variables("sigma", sig_hat.shape, lower=lo, upper=hi)
    kp = lp.add_variables("k_plus", (S, A), upper=np.where(enabled, np.inf, 0.0), objective=-params.beta)
    km = lp.add_variables("k_minus", (S, A), upper=np.where(enabled, np.inf, 0.0), objective=-params.beta)

    # discounted flow: mu(s) - gamma * sum P(s | s', a) nu(s', a) = mu0(s)
    PT = p.transitions.T.tocoo()
    lp.add_constraints(
        "flow",
        np.concatenate([np.arange(S), PT.row]),
        np.concatenate([mu, nu.ravel()[PT.col]]),
        np.concatenate([np.ones(S), -gamma * PT.data]),
        "==", p.initial,
    )
    _marginal(lp, "marginal", mu, nu, np.arange(S))
    o_rows, o_cols, o_vals = _policy_rows(p)
    _policy_block(lp, "policy", mu, nu, sigma, kp, km, mu_hat, pi_hat, enabled, o_rows, o_cols, o_vals)

    zrows = np.repeat(np.arange(sig_hat.shape[0]), A)
    lp.add_constraints("simplex", zrows, sigma.ravel(), zen.ravel().astype(float), "==", np.ones(sig_hat.shape[0]))

    if spec is not None:
        if prev.spec is None:
            raise ValueError("spec linearization point missing")
        src = prev.spec.sources
        factor = 1.0 - SPEC_EPSILON if prev.spec.regularized else 1.0
        en_src = enabled & src[:, None]
        mus = lp.add_variables("mu_sp", S)
        nus = lp.add_variables("nu_sp", (S, A), upper=np.where(en_src, np.inf, 0.0))
        ksp = lp.add_variables("ksp_plus", (S, A), upper=np.where(en_src, np.inf, 0.0), objective=-params.beta)
        ksm = lp.add_variables("ksp_minus", (S, A), upper=np.where(en_src, np.inf, 0.0), objective=-params.beta)
        gam = lp.add_variables("gamma_sp", 1, objective=-params.beta_sp)
        keep = src[PT.col // A]
        lp.add_constraints(
            "spec_flow",
            np.concatenate([np.arange(S), PT.row[keep]]),
            np.concatenate([mus, nus.ravel()[PT.col[keep]]]),
            np.concatenate([np.ones(S), -factor * PT.data[keep]]),
            "==", p.initial,
        )
        _marginal(lp, "spec_marginal", mus, nus, np.flatnonzero(src))
        _policy_block(
            lp, "spec_policy", mus, nus, sigma, ksp, ksm, prev.spec.mu_sp, pi_hat, en_src, o_rows, o_cols, o_vals
        )
        tgt = np.array(sorted(spec.target))
        lp.add_constraints(
            "spec_mass", np.zeros(len(tgt) + 1, dtype=int), np.concatenate([mus[tgt], gam]),
            np.ones(len(tgt) + 1), ">=", [spec.lam],
        )
    return lp


def _marginal(lp: LpProblem, name, mu, nu, states):
    A = nu.shape[1]
    k = len(states)
    rows = np.concatenate([np.arange(k), np.repeat(np.arange(k), A)])
    cols = np.concatenate([mu[states], nu[states].ravel()])
    vals = np.concatenate([np.ones(k), -np.ones(k * A)])
    lp.add_constraints(name, rows, cols, vals, "==", np.zeros(k))


def _policy_block(lp, name, mu, nu, sigma, kp, km, mu_hat, pi_hat, mask, o_rows, o_cols, o_vals):
    """nu - mu_hat * (O sigma) - pi_hat * mu + k+ - k- = -mu_hat * pi_hat on the masked (s, a)."""
    S, A = mask.shape
    flat = mask.ravel()
    rid = np.full(S * A, -1)
    rid[flat] = np.arange(flat.sum())
    pairs = np.flatnonzero(flat)
    s_of = pairs // A
    keep = flat[o_rows]
    orow = rid[o_rows[keep]]
    rows = np.concatenate([np.arange(len(pairs))] * 4 + [orow])
    cols = np.concatenate([
        nu.ravel()[pairs], mu[s_of], kp.ravel()[pairs], km.ravel()[pairs], sigma.ravel()[o_cols[keep]],
    ])
    vals = np.concatenate([
        np.ones(len(pairs)), -pi_hat.ravel()[pairs], np.ones(len(pairs)), -np.ones(len(pairs)),
        -mu_hat[o_rows[keep] // A] * o_vals[keep],
    ])
    rhs = -(mu_hat[s_of] * pi_hat.ravel()[pairs])
    lp.add_constraints(name, rows, cols, vals, "==", rhs)


def _normalized(p: Pomdp, sigma: np.ndarray) -> Policy:
    s = np.where(p.observation_enabled, np.clip(sigma, 0.0, None), 0.0)
    s = s / s.sum(axis=1, keepdims=True)
    return Policy(s).floored(p, POLICY_FLOOR)


def evaluate_point(
    p: Pomdp, policy: Policy, features: FeatureBasis, theta, spec: SpecConstraint | None, params: ScpParams
) -> tuple[Linearization, float]:
    """Verified counts for ``policy`` and its objective C(sigma) (including the spec penalty)."""
    counts = bellman_flow_solve(p, policy)
    cost = realized_cost(counts, theta, features)
    spv = None
    if spec is not None:
        spv = spec_flow_solve(p, policy, spec.target, spec.blocked)
        cost += spec_penalty(spv.target_mass, spec.lam, params.beta_sp)
    return Linearization(policy, counts, spv), cost


def scp_forward(
    p: Pomdp,
    features: FeatureBasis,
    theta: RewardWeights | np.ndarray,
    init: Policy | None = None,
    spec: SpecConstraint | None = None,
    params: ScpParams = ScpParams(),
    callback=None,
) -> ScpResult:
    """Locally optimal policy for the entropy-regularized (and optionally constrained) problem.

    Trust-region radius is tracked as ``rho - 1``, which is multiplied by
    ``rho0`` after an accepted step and divided by it after a rejection; the loop
    stops once it falls to ``rho_lim``.
    """
    t0 = time.perf_counter()
    if params.gamma is not None:
        p = p.with_discount(params.gamma)
    if features.values.shape[:2] != (p.n_states, p.n_actions):
        raise ValueError("feature basis does not match the model")
    theta = np.asarray(getattr(theta, "theta", theta), dtype=float)
    policy = (init or Policy.uniform(p)).floored(p, POLICY_FLOOR)
    point, cost = evaluate_point(p, policy, features, theta, spec, params)
    trace = [cost]
    rows: list[dict] = []
    width = params.rho_init - 1.0
    stall = 0
    status = "max_iters"
    warm = WarmStart()

    def result(st):
        return ScpResult(point.policy, point.counts, point.spec, cost, list(trace), rows, st, time.perf_counter() - t0)

    for it in range(1, params.max_iters + 1):
        lp = build_linearized_lp(p, features, theta, point, 1.0 + width, spec, params)
        sol = solve_lp(lp, params.backend, warm=warm)
        if sol.status != "optimal":
            raise ScpAbort(f"LP {sol.status} at iteration {it}: {sol.message}", result("aborted"))
        slack = [sol.values[k] for k in ("k_plus", "k_minus", "ksp_plus", "ksp_minus") if k in sol.values]
        slack_max = max(float(np.abs(v).max(initial=0.0)) for v in slack)
        cand, cand_cost = evaluate_point(p, _normalized(p, sol.values["sigma"]), features, theta, spec, params)
        accepted = cand_cost >= cost
        if accepted:
            delta = cand_cost - cost
            point, cost = cand, cand_cost
            trace.append(cost)
            width *= params.rho0
            stall = stall + 1 if abs(delta) < params.stall_tol else 0
        else:
            width /= params.rho0
        rows.append({
            "iter": it, "rho": 1.0 + width, "accepted": int(accepted), "realized_cost": cost,
            "spec_mass": point.spec.target_mass if point.spec is not None else math.nan,
            "slack_max": slack_max,
        })
        if callback is not None:
            callback(it, point, rows[-1])
        log.debug("scp iter %d rho-1=%.3g accepted=%s cost=%.6f", it, width, accepted, cost)
        if stall >= params.stall_steps:
            status = "stalled"
            break
        if width <= params.rho_lim:
            status = "converged"
            break
    return result(status)


def write_iteration_log(rows: list[dict], path) -> None:
    cols = ["iter", "rho", "accepted", "realized_cost", "spec_mass", "slack_max"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)

