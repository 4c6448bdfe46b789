"""Occupancy measures: discounted Bellman flow, causal entropy, reachability flow."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import PROB_TOL, FeatureBasis, Pomdp, RewardWeights

COUNT_FLOOR = 1e-12
SPEC_EPSILON = 1e-6


@dataclass(frozen=True, eq=False)
class Policy:
    """Memoryless observation-based policy, sigma[z, a]."""

    sigma: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=float)
        if s.ndim != 2:
            raise ValueError("policy must be a (Z, A) matrix")
        if (s < -PROB_TOL).any() or np.abs(s.sum(axis=1) - 1.0).max(initial=0.0) > PROB_TOL:
            raise ValueError("policy rows must be probability distributions")
        s = np.clip(s, 0.0, None)
        s.flags.writeable = False
        object.__setattr__(self, "sigma", s)

    @classmethod
    def uniform(cls, p: Pomdp) -> "Policy":
        mask = p.observation_enabled.astype(float)
        return cls(mask / mask.sum(axis=1, keepdims=True))

    def state_policy(self, p: Pomdp) -> np.ndarray:
        """pi[s, a] = sum_z O(z|s) sigma[z, a]."""
        return np.asarray(p.observation_fn @ self.sigma)

    def floored(self, p: Pomdp, floor: float = 1e-9) -> "Policy":
        """Clip enabled entries to at least ``floor`` and renormalize rows."""
        mask = p.observation_enabled
        s = np.where(mask, np.maximum(self.sigma, floor), 0.0)
        return Policy(s / s.sum(axis=1, keepdims=True))


@dataclass(frozen=True, eq=False)
class VisitationCounts:
    mu: np.ndarray
    nu: np.ndarray

    @property
    def state_policy(self) -> np.ndarray:
        """nu / mu, with 0/0 taken as 0."""
        mu = self.mu[:, None]
        return np.divide(self.nu, mu, out=np.zeros_like(self.nu), where=mu > 0)


@dataclass(frozen=True, eq=False)
class SpecVisitation:
    mu_sp: np.ndarray
    nu_sp: np.ndarray
    target_mass: float
    sources: np.ndarray
    regularized: bool = False


def induced_chain(p: Pomdp, pi: np.ndarray) -> sp.csr_matrix:
    """State-to-state kernel P_pi[s, s'] = sum_a pi[s, a] P(s'|s, a)."""
    S, A = p.n_states, p.n_actions
    D = sp.csr_matrix(
        (pi.ravel(), (np.repeat(np.arange(S), A), np.arange(S * A))), shape=(S, S * A)
    )
    return sp.csr_matrix(D @ p.transitions)


def bellman_flow_solve(p: Pomdp, policy: Policy, discount: float | None = None) -> VisitationCounts:
    """Discounted state and state-action counts of ``policy`` on ``p``."""
    gamma = p.discount if discount is None else discount
    pi = policy.state_policy(p)
    P = induced_chain(p, pi)
    M = (sp.identity(p.n_states, format="csc") - gamma * P.T).tocsc()
    mu = spla.spsolve(M, p.initial)
    mu = np.atleast_1d(mu)
    resid = np.abs(M @ mu - p.initial).max()
    assert np.isfinite(mu).all() and resid < 1e-8, f"Bellman flow residual {resid}"
    mu = np.where(np.abs(mu) < 1e-14, 0.0, mu)
    return VisitationCounts(mu, mu[:, None] * pi)


def causal_entropy(nu: np.ndarray, mu: np.ndarray) -> float:
    """sum -nu log(nu / mu) with 0 log 0 = 0; ``mu`` is per state, ``nu`` per (state, action)."""
    nu = np.where(nu < COUNT_FLOOR, 0.0, nu)
    mu = np.broadcast_to(np.where(mu < COUNT_FLOOR, 0.0, mu)[:, None], nu.shape)
    pos = nu > 0
    return float(-(nu[pos] * np.log(nu[pos] / mu[pos])).sum())


def realized_cost(
    vc: VisitationCounts, theta: RewardWeights | np.ndarray, features: FeatureBasis
) -> float:
    """Causal entropy plus expected discounted reward of the counts."""
    reward = features.reward(theta)
    return causal_entropy(vc.nu, vc.mu) + float((reward * vc.nu).sum())


def feature_expectation(vc: VisitationCounts, features: FeatureBasis) -> np.ndarray:
    """R_phi = sum_{s,a} phi(s,a) nu(s,a)."""
    return np.einsum("sad,sa->d", features.values, vc.nu)


def flow_sources(p: Pomdp, target, blocked=()) -> np.ndarray:
    """States whose outgoing flow is counted in the reachability equations.

    Target states, ``blocked`` states (those that falsify the spec) and absorbing
    states never pass mass on.
    """
    mask = ~p.absorbing.copy()
    mask[list(target)] = False
    mask[list(blocked)] = False
    return mask


def spec_flow_solve(p: Pomdp, policy: Policy, target, blocked=()) -> SpecVisitation:
    """Undiscounted counts that stop at the target; ``target_mass`` = Pr(reach target before blocked)."""
    target = np.asarray(sorted(target), dtype=int)
    if target.size == 0:
        raise ValueError("target set must be nonempty")
    S = p.n_states
    pi = policy.state_policy(p)
    src = flow_sources(p, target, blocked)
    P = sp.csr_matrix(sp.diags(src.astype(float)) @ induced_chain(p, pi))

    # A source state that cannot leave the source set under pi sits in a recurrent class.
    support = P.copy()
    support.data = (support.data > 0).astype(float)
    support.eliminate_zeros()
    exits = np.asarray(P.sum(axis=1)).ravel() < 1.0 - 1e-12
    exits |= ~src
    reach_exit = _can_reach(support, exits)
    regularized = bool((src & ~reach_exit).any())
    factor = 1.0 - SPEC_EPSILON if regularized else 1.0

    M = (sp.identity(S, format="csc") - factor * P.T).tocsc()
    mu = np.atleast_1d(spla.spsolve(M, p.initial))
    resid = np.abs(M @ mu - p.initial).max()
    assert np.isfinite(mu).all() and resid < 1e-8 * max(1.0, np.abs(mu).max()), f"spec flow residual {resid}"
    mu = np.where(np.abs(mu) < 1e-14, 0.0, mu)
    nu = np.where(src[:, None], mu[:, None] * pi, 0.0)
    mass = float(mu[target].sum())
    return SpecVisitation(mu, nu, mass, src, regularized)


def _can_reach(graph: sp.csr_matrix, goal: np.ndarray) -> np.ndarray:
    """States with a path in ``graph`` to some state in ``goal``."""
    seen = goal.copy()
    frontier = goal.astype(float)
    while frontier.any():
        new = (graph @ frontier > 0) & ~seen
        seen |= new
        frontier = new.astype(float)
    return seen


def spec_penalty(target_mass: float, lam: float, beta_sp: float) -> float:
    """min(0, (mass - lambda) * beta_sp)."""
    return min(0.0, (target_mass - lam) * beta_sp)
