"""Simulation, exact finite-horizon evaluation, experts and a belief-grid reference solver."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .flow import Policy, induced_chain
from .memory import Fsc, ProductPomdp, fsc_as_product_policy
from .model import FeatureBasis, Pomdp, RewardWeights, belief_update, initial_belief
from .spec import SpecFormula


@dataclass(frozen=True, eq=False)
class StatePolicy:
    """A policy acting on the true state, pi[s, a] (used for fully observable experts)."""

    pi: np.ndarray


@dataclass(frozen=True, eq=False)
class Trajectory:
    observations: np.ndarray
    actions: np.ndarray
    states: np.ndarray
    rewards: np.ndarray | None = None

    def __post_init__(self):
        if not (len(self.observations) == len(self.actions) == len(self.states)):
            raise ValueError("trajectory arrays must be aligned")

    @property
    def horizon(self) -> int:
        return len(self.actions)

    def to_json(self, with_states: bool = False) -> str:
        doc = {"obs": self.observations.tolist(), "act": self.actions.tolist()}
        if with_states:
            doc["states"] = self.states.tolist()
        return json.dumps(doc)


class _RowSampler:
    """Inverse-CDF sampling from the rows of a sparse stochastic matrix."""

    def __init__(self, m: sp.csr_matrix):
        m = sp.csr_matrix(m)
        self.indptr, self.indices = m.indptr, m.indices
        self.cum = np.cumsum(m.data)
        before = np.concatenate([[0.0], self.cum])
        self.base = before[m.indptr[:-1]]
        self.total = before[m.indptr[1:]] - self.base

    def __call__(self, rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(len(rows))
        k = np.searchsorted(self.cum, self.base[rows] + u * self.total[rows], side="right")
        k = np.clip(k, self.indptr[rows], self.indptr[rows + 1] - 1)
        return self.indices[k]


def _categorical(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise inverse CDF on precomputed cumulative rows."""
    return np.minimum((u[:, None] >= cum).sum(axis=1), cum.shape[1] - 1)


def simulate_paths(
    p: Pomdp,
    policy: Policy | Fsc | StatePolicy,
    horizon: int,
    episodes: int,
    seed: int | None = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized rollouts; returns ``(states, observations, actions)`` each of shape (episodes, horizon)."""
    rng = np.random.default_rng(seed)
    S, A = p.n_states, p.n_actions
    trans = _RowSampler(p.transitions)
    obs = _RowSampler(p.observation_fn)
    s = np.searchsorted(np.cumsum(p.initial), rng.random(episodes) * p.initial.sum(), side="right")
    s = np.minimum(s, S - 1)
    states = np.zeros((episodes, horizon), dtype=np.int64)
    observations = np.zeros((episodes, horizon), dtype=np.int64)
    actions = np.zeros((episodes, horizon), dtype=np.int64)
    if isinstance(policy, Fsc):
        M = policy.memory_size
        joint = (policy.eta[..., None] * policy.delta).reshape(M * p.n_observations, A * M)
        cum = np.cumsum(joint, axis=1)
        mem = np.zeros(episodes, dtype=np.int64)
    elif isinstance(policy, StatePolicy):
        cum = np.cumsum(policy.pi, axis=1)
    else:
        cum = np.cumsum(policy.sigma, axis=1)
    for t in range(horizon):
        z = obs(s, rng)
        u = rng.random(episodes)
        if isinstance(policy, Fsc):
            choice = _categorical(cum[mem * p.n_observations + z], u)
            a, mem = choice // M, choice % M
        elif isinstance(policy, StatePolicy):
            a = _categorical(cum[s], u)
        else:
            a = _categorical(cum[z], u)
        states[:, t], observations[:, t], actions[:, t] = s, z, a
        s = trans(s * A + a, rng)
    return states, observations, actions


def simulate(
    p: Pomdp,
    policy: Policy | Fsc | StatePolicy,
    horizon: int,
    episodes: int,
    seed: int | None = 0,
    theta=None,
    features: FeatureBasis | None = None,
) -> list[Trajectory]:
    states, observations, actions = simulate_paths(p, policy, horizon, episodes, seed)
    rewards = None
    if theta is not None and features is not None:
        rewards = features.reward(theta)[states, actions]
    return [
        Trajectory(observations[i], actions[i], states[i], None if rewards is None else rewards[i])
        for i in range(episodes)
    ]


# ---------------------------------------------------------------------------
# exact evaluation


def reward_curve(p: Pomdp, pi: np.ndarray, reward: np.ndarray, horizon: int, initial=None) -> np.ndarray:
    """Expected reward at each step t < horizon of the state policy ``pi`` (exact propagation)."""
    P = induced_chain(p, pi).T.tocsr()
    r = (pi * reward).sum(axis=1)
    d = p.initial.copy() if initial is None else np.asarray(initial, float)
    out = np.zeros(horizon)
    for t in range(horizon):
        out[t] = d @ r
        d = P @ d
    return out


def policy_value(
    p: Pomdp, policy: Policy | StatePolicy, theta, features: FeatureBasis, horizon: int = 100
) -> float:
    """Exact expected undiscounted reward accumulated over ``horizon`` steps."""
    pi = policy.pi if isinstance(policy, StatePolicy) else policy.state_policy(p)
    return float(reward_curve(p, pi, features.reward(theta), horizon).sum())


def fsc_value(pp: ProductPomdp, fsc: Fsc, theta, features: FeatureBasis, horizon: int = 100) -> float:
    """Exact value of a controller, via its memoryless policy on the product (features on the base)."""
    return policy_value(pp.product, fsc_as_product_policy(pp, fsc), theta, pp.lift_features(features), horizon)


def discounted_feature_samples(
    features: FeatureBasis, states: np.ndarray, actions: np.ndarray, discount: float
) -> np.ndarray:
    """Per-episode sum_t gamma^t phi(s_t, a_t)."""
    w = discount ** np.arange(states.shape[1])
    return np.einsum("t,ntd->nd", w, features.values[states, actions])


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    mean: np.ndarray  # mean accumulated reward after each step
    stderr: np.ndarray
    feature_estimate: np.ndarray | None = None
    feature_stderr: np.ndarray | None = None
    satisfaction: float | None = None
    satisfaction_stderr: float | None = None
    episodes: int = 0

    @property
    def final(self) -> float:
        return float(self.mean[-1])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "mean", "stderr"])
            for t, (m, e) in enumerate(zip(self.mean, self.stderr), start=1):
                w.writerow([t, f"{m:.10g}", f"{e:.10g}"])


def evaluate(
    p: Pomdp,
    policy: Policy | Fsc | StatePolicy,
    theta,
    features: FeatureBasis,
    spec: SpecFormula | None = None,
    horizon: int = 100,
    episodes: int = 200,
    seed: int | None = 0,
    feature_horizon: int | None = None,
) -> EvalReport:
    """Monte-Carlo accumulated-reward curve, discounted features and spec frequency.

    ``feature_horizon`` (default: the same rollouts) sets the truncation used for the
    discounted feature estimate, which should be long when the discount is close to 1.
    """
    states, _, actions = simulate_paths(p, policy, horizon, episodes, seed)
    rew = features.reward(theta)[states, actions]
    acc = np.cumsum(rew, axis=1)
    sd = acc.std(axis=0, ddof=1) if episodes > 1 else np.zeros(horizon)
    rep = EvalReport(acc.mean(axis=0), sd / math.sqrt(episodes), episodes=episodes)
    fh = feature_horizon or horizon
    if fh != horizon:
        states_f, _, actions_f = simulate_paths(p, policy, fh, episodes, None if seed is None else seed + 1)
    else:
        states_f, actions_f = states, actions
    f = discounted_feature_samples(features, states_f, actions_f, p.discount)
    rep.feature_estimate = f.mean(axis=0)
    rep.feature_stderr = (f.std(axis=0, ddof=1) if episodes > 1 else np.zeros(f.shape[1])) / math.sqrt(episodes)
    if spec is not None:
        ok = spec.holds_on(p.labels, states).astype(float)
        rep.satisfaction = float(ok.mean())
        rep.satisfaction_stderr = float(ok.std(ddof=1) / math.sqrt(episodes)) if episodes > 1 else 0.0
    return rep


# ---------------------------------------------------------------------------
# experts


def mdp_expert(p: Pomdp, theta, features: FeatureBasis, tol: float = 1e-10, max_iters: int = 100_000) -> StatePolicy:
    """Optimal deterministic state-based policy of the fully observable model (discounted value iteration)."""
    S, A = p.n_states, p.n_actions
    R = features.reward(theta)
    T = p.transitions
    V = np.zeros(S)
    for _ in range(max_iters):
        Q = np.where(p.enabled, R + p.discount * (T @ V).reshape(S, A), -np.inf)
        V2 = Q.max(axis=1)
        if np.abs(V2 - V).max() < tol:
            V = V2
            break
        V = V2
    Q = np.where(p.enabled, R + p.discount * (T @ V).reshape(S, A), -np.inf)
    pi = np.zeros((S, A))
    pi[np.arange(S), Q.argmax(axis=1)] = 1.0
    return StatePolicy(pi)


# ---------------------------------------------------------------------------
# belief-grid reference solver


class OracleTooLarge(ValueError):
    pass


def _freudenthal(b: np.ndarray, q: int) -> tuple[np.ndarray, np.ndarray]:
    """Vertices (as integer cumulative coordinates) and barycentric weights of b on the q-grid."""
    n = len(b)
    x = q * np.cumsum(b[::-1])[::-1]
    x[0] = q
    v = np.floor(x + 1e-12)
    d = x - v
    # ties broken so the fixed first coordinate is never incremented
    order = np.lexsort((np.arange(n) == 0, -d))
    ds = d[order]
    verts = np.empty((n, n), dtype=np.int64)
    verts[0] = v
    for k in range(1, n):
        verts[k] = verts[k - 1]
        verts[k, order[k - 1]] += 1
    lam = np.concatenate([[1.0 - ds[0]], ds[:-1] - ds[1:]]) if n > 1 else np.array([1.0])
    keep = lam > 1e-12
    return verts[keep], lam[keep]


def _vertex_belief(v: np.ndarray, q: int) -> np.ndarray:
    return (v - np.concatenate([v[1:], [0]])) / q


@dataclass
class OracleResult:
    value: float
    resolution: int
    horizon: int
    vertices: list
    values: np.ndarray  # (horizon + 1, V)
    actions: np.ndarray  # (horizon, V)
    index: dict = field(default_factory=dict)

    def interpolate(self, b: np.ndarray, t: int = 0) -> float:
        verts, lam = _freudenthal(np.asarray(b, float), self.resolution)
        return float(sum(l * self.values[t, self.index[tuple(v)]] for v, l in zip(verts, lam)))


def belief_grid_oracle(
    p: Pomdp,
    theta,
    features: FeatureBasis,
    resolution: int = 20,
    horizon: int = 100,
    max_states: int = 25,
    max_vertices: int = 2_000_000,
    discount: float = 1.0,
) -> OracleResult:
    """Finite-horizon value (undiscounted by default) over a Freudenthal belief grid.

    Grid values are backed up exactly and off-grid beliefs are interpolated on
    the enclosing simplex. Because the optimal finite-horizon value is convex in
    the belief, the returned value bounds the true optimum from above.
    """
    S, A, Z = p.n_states, p.n_actions, p.n_observations
    if S > max_states:
        raise OracleTooLarge(f"belief-grid oracle refuses models with {S} > {max_states} states")
    q = int(resolution)
    R = features.reward(theta)
    Od = p.observation_dense
    PT = [m.T.toarray() for m in p.action_matrices]

    index: dict[tuple, int] = {}
    verts: list[np.ndarray] = []

    def add(v):
        key = tuple(v.tolist())
        if key not in index:
            index[key] = len(verts)
            verts.append(v)
        return index[key]

    z0 = Od.T @ p.initial
    roots = []
    for z in np.flatnonzero(z0 > 0):
        vs, lam = _freudenthal(initial_belief(p, z), q)
        roots.append((z0[z], [add(v) for v in vs], lam))

    rows = [[] for _ in range(A)]
    cols = [[] for _ in range(A)]
    vals = [[] for _ in range(A)]
    done = 0
    while done < len(verts):
        if len(verts) > max_vertices:
            raise OracleTooLarge(f"belief grid closure exceeded {max_vertices} vertices")
        i = done
        b = _vertex_belief(verts[i], q)
        for a in range(A):
            pred = PT[a] @ b
            pz = Od.T @ pred
            for z in np.flatnonzero(pz > 1e-15):
                post = pred * Od[:, z] / pz[z]
                vs, lam = _freudenthal(post, q)
                for v, l in zip(vs, lam):
                    rows[a].append(i)
                    cols[a].append(add(v))
                    vals[a].append(pz[z] * l)
        done += 1

    V = len(verts)
    B = np.array([_vertex_belief(v, q) for v in verts])
    W = [sp.csr_matrix((vals[a], (rows[a], cols[a])), shape=(V, V)) for a in range(A)]
    Rb = B @ np.where(p.enabled, R, 0.0)
    allowed = ((B > 0).astype(float) @ (~p.enabled).astype(float)) == 0
    values = np.zeros((horizon + 1, V))
    acts = np.zeros((horizon, V), dtype=np.int64)
    for t in range(horizon - 1, -1, -1):
        Q = np.stack([Rb[:, a] + discount * (W[a] @ values[t + 1]) for a in range(A)], axis=1)
        Q = np.where(allowed, Q, -np.inf)
        acts[t] = Q.argmax(axis=1)
        values[t] = Q.max(axis=1)
    total = sum(w * float(lam @ values[0, ids]) for w, ids, lam in roots)
    return OracleResult(total, q, horizon, verts, values, acts, index)
