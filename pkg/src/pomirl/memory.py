"""Finite-state controllers and the memory product that reduces them to memoryless policies."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .flow import Policy
from .model import PROB_TOL, FeatureBasis, Pomdp

COLLAPSED = -1


@dataclass(frozen=True, eq=False)
class Fsc:
    """An M-state controller.

    ``eta[n, z, a]`` is the action distribution and ``delta[n, z, a, n']`` the memory
    update. The controller starts in memory state 0.
    """

    eta: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float)
        delta = np.asarray(self.delta, dtype=float)
        M, Z, A = eta.shape
        if delta.shape != (M, Z, A, M):
            raise ValueError(f"delta must have shape {(M, Z, A, M)}, got {delta.shape}")
        if np.abs(eta.sum(axis=2) - 1).max() > PROB_TOL or (eta < -PROB_TOL).any():
            raise ValueError("eta rows must be distributions")
        if np.abs(delta.sum(axis=3) - 1).max() > PROB_TOL or (delta < -PROB_TOL).any():
            raise ValueError("delta rows must be distributions")
        object.__setattr__(self, "eta", np.clip(eta, 0, None))
        object.__setattr__(self, "delta", np.clip(delta, 0, None))

    @property
    def memory_size(self) -> int:
        return self.eta.shape[0]

    def to_dict(self) -> dict:
        M, Z, A = self.eta.shape
        eta = [{"n": n, "z": z, "dist": self.eta[n, z].tolist()} for n in range(M) for z in range(Z)]
        delta = [
            {"n": n, "z": z, "a": a, "dist": self.delta[n, z, a].tolist()}
            for n in range(M) for z in range(Z) for a in range(A)
        ]
        return {"M": M, "eta": eta, "delta": delta}

    @classmethod
    def from_dict(cls, doc: dict) -> "Fsc":
        M = int(doc["M"])
        first = doc["eta"][0]
        A = len(first["dist"])
        Z = 1 + max(e["z"] for e in doc["eta"])
        eta = np.zeros((M, Z, A))
        delta = np.zeros((M, Z, A, M))
        for e in doc["eta"]:
            eta[e["n"], e["z"]] = e["dist"]
        for e in doc["delta"]:
            delta[e["n"], e["z"], e["a"]] = e["dist"]
        return cls(eta, delta)

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True, eq=False)
class ProductPomdp:
    """A POMDP over (state, memory) pairs together with maps back to the base model.

    ``state_mem`` / ``obs_mem`` are ``COLLAPSED`` for sink states (and their
    observations) that keep a single copy.
    """

    base: Pomdp
    memory_size: int
    product: Pomdp
    state_base: np.ndarray
    state_mem: np.ndarray
    obs_base: np.ndarray
    obs_mem: np.ndarray
    action_base: np.ndarray
    action_mem: np.ndarray

    def lift_features(self, features: FeatureBasis) -> FeatureBasis:
        vals = features.values[self.state_base][:, self.action_base]
        return FeatureBasis(vals, features.names)

    def marginalize(self, values: np.ndarray) -> np.ndarray:
        """Sum a per-product-state vector over memory."""
        out = np.zeros(self.base.n_states)
        np.add.at(out, self.state_base, values)
        return out

    def lift_policy(self, policy: Policy) -> Policy:
        """Product policy that plays ``policy`` and never changes memory."""
        M = self.memory_size
        Zp, Ap = self.product.n_observations, self.product.n_actions
        sig = np.zeros((Zp, Ap))
        for zp in range(Zp):
            n = max(self.obs_mem[zp], 0)
            cols = self.action_mem == n
            sig[zp, cols] = policy.sigma[self.obs_base[zp], self.action_base[cols]]
        return Policy(sig)


def collapsible_sinks(p: Pomdp) -> np.ndarray:
    """Absorbing states that deterministically emit an observation no other state emits."""
    O = p.observation_fn
    Oc = O.tocsc()
    out = np.zeros(p.n_states, dtype=bool)
    for s in np.flatnonzero(p.absorbing):
        lo, hi = O.indptr[s], O.indptr[s + 1]
        zs = O.indices[lo:hi][O.data[lo:hi] > 0]
        if len(zs) != 1:
            continue
        z = zs[0]
        emitters = Oc.indices[Oc.indptr[z]:Oc.indptr[z + 1]][Oc.data[Oc.indptr[z]:Oc.indptr[z + 1]] > 0]
        out[s] = len(emitters) == 1
    return out


def build_product(p: Pomdp, memory_size: int) -> ProductPomdp:
    """Product of ``p`` with ``memory_size`` memory states.

    Product actions are pairs (a, n') choosing the action and the next memory
    state at once, so memoryless product policies are exactly the stochastic FSCs.
    """
    M = int(memory_size)
    if M < 1:
        raise ValueError("memory size must be at least 1")
    S, A, Z = p.n_states, p.n_actions, p.n_observations
    sink = collapsible_sinks(p)
    sink_obs = np.zeros(Z, dtype=bool)
    for s in np.flatnonzero(sink):
        sink_obs[p.observation_fn[s].indices] = True

    # product state index tables
    state_base, state_mem = [], []
    pindex = np.full((S, M), -1)
    for s in range(S):
        for n in ([COLLAPSED] if sink[s] else range(M)):
            idx = len(state_base)
            if n == COLLAPSED:
                pindex[s, :] = idx
            else:
                pindex[s, n] = idx
            state_base.append(s)
            state_mem.append(n)
    state_base = np.array(state_base)
    state_mem = np.array(state_mem)
    Sp = len(state_base)

    obs_base, obs_mem = [], []
    zindex = np.full((Z, M), -1)
    for z in range(Z):
        for n in ([COLLAPSED] if sink_obs[z] else range(M)):
            idx = len(obs_base)
            if n == COLLAPSED:
                zindex[z, :] = idx
            else:
                zindex[z, n] = idx
            obs_base.append(z)
            obs_mem.append(n)
    obs_base = np.array(obs_base)
    obs_mem = np.array(obs_mem)
    Zp = len(obs_base)

    action_base = np.repeat(np.arange(A), M)
    action_mem = np.tile(np.arange(M), A)
    Ap = A * M

    # transitions: (s,n) --(a,n')--> (s',n') with P(s'|s,a); collapsed sinks loop
    T = p.transitions.tocsr()
    counts = np.diff(T.indptr).reshape(S, A).sum(axis=1)
    starts = T.indptr[np.arange(S) * A]
    entry_idx = _ranges(starts[state_base], counts[state_base])
    owner = np.repeat(np.arange(Sp), counts[state_base])
    entry_row = np.repeat(np.arange(S * A), np.diff(T.indptr))[entry_idx]
    a_of, dst, val = entry_row % A, T.indices[entry_idx], T.data[entry_idx]
    n2 = np.arange(M)
    rows = (owner[:, None] * Ap + a_of[:, None] * M + n2[None, :]).ravel()
    cols = pindex[dst][:, n2].ravel()
    vals = np.repeat(val, M)
    Tp = sp.csr_matrix((vals, (rows, cols)), shape=(Sp * Ap, Sp))
    Tp.sum_duplicates()

    O = p.observation_fn.tocsr()
    ocounts = np.diff(O.indptr)
    oidx = _ranges(O.indptr[state_base], ocounts[state_base])
    oowner = np.repeat(np.arange(Sp), ocounts[state_base])
    ocols = zindex[O.indices[oidx], np.maximum(state_mem[oowner], 0)]
    Op = sp.csr_matrix((O.data[oidx], (oowner, ocols)), shape=(Sp, Zp))

    mu0 = np.zeros(Sp)
    for s in range(S):
        mu0[pindex[s, 0]] += p.initial[s]
    enabled = p.enabled[state_base][:, action_base]

    def sname(i):
        return p.states[state_base[i]] + ("" if state_mem[i] == COLLAPSED else f"@{state_mem[i]}")

    def zname(i):
        return p.observations[obs_base[i]] + ("" if obs_mem[i] == COLLAPSED else f"@{obs_mem[i]}")

    labels = {
        name: frozenset(int(i) for i in np.flatnonzero(np.isin(state_base, list(members))))
        for name, members in p.labels.items()
    }
    prod = Pomdp(
        [sname(i) for i in range(Sp)],
        [f"{p.actions[a]}>{n}" for a, n in zip(action_base, action_mem)],
        [zname(i) for i in range(Zp)],
        Tp, Op, mu0, p.discount, enabled, labels,
    )
    return ProductPomdp(p, M, prod, state_base, state_mem, obs_base, obs_mem, action_base, action_mem)


def _ranges(starts: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Concatenation of ``arange(start, start + count)`` for each pair."""
    total = counts.sum()
    if total == 0:
        return np.zeros(0, dtype=int)
    offsets = np.repeat(starts - np.concatenate([[0], np.cumsum(counts)[:-1]]), counts)
    return np.arange(total) + offsets


def project_policy(pp: ProductPomdp, policy: Policy) -> Fsc:
    """Read an FSC off a memoryless product policy."""
    M, base = pp.memory_size, pp.base
    Z, A = base.n_observations, base.n_actions
    sig = policy.sigma
    joint = np.zeros((M, Z, A, M))
    for zp in range(pp.product.n_observations):
        z, n = pp.obs_base[zp], pp.obs_mem[zp]
        block = sig[zp].reshape(A, M)
        if n == COLLAPSED:
            joint[:, z] = block
        else:
            joint[n, z] = block
    eta = joint.sum(axis=3)
    with np.errstate(invalid="ignore", divide="ignore"):
        delta = np.where(eta[..., None] > 0, joint / eta[..., None], 1.0 / M)
    return Fsc(eta, delta)


def fsc_as_product_policy(pp: ProductPomdp, fsc: Fsc) -> Policy:
    """The memoryless product policy sigma((z,n),(a,n')) = eta(n,z)(a) delta(n,z,a)(n')."""
    M = pp.memory_size
    A = pp.base.n_actions
    sig = np.zeros((pp.product.n_observations, A * M))
    for zp in range(pp.product.n_observations):
        z, n = pp.obs_base[zp], max(pp.obs_mem[zp], 0)
        sig[zp] = (fsc.eta[n, z][:, None] * fsc.delta[n, z]).ravel()
    return Policy(sig)
