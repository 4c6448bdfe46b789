"""POMDP data model, JSON model documents, validation and belief filtering."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Mapping

import numpy as np
import scipy.sparse as sp

PROB_TOL = 1e-9

_MODEL_KEYS = {
    "states", "actions", "observations", "discount", "initial",
    "transitions", "observation_fn", "labels", "features",
}
# optional keys carried alongside a model (default spec, calibrated weights)
_EXTRA_KEYS = {"spec", "theta_true"}


class ModelError(Exception):
    """Base class for model document problems."""


class ModelSyntaxError(ModelError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = f" at line {line}, column {column}" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.line = line
        self.column = column


class ModelValidationError(ModelError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


class InconsistentTraceError(ValueError):
    """Raised when an observation has zero probability under the current belief."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Pomdp:
    """A finite POMDP with sparse kernels.

    ``transitions`` is a CSR matrix of shape ``(S*A, S)``; row ``s*A + a`` holds
    P(. | s, a). Rows of disabled state-action pairs are empty.
    ``observation_fn`` is a CSR matrix of shape ``(S, Z)``.
    """

    states: tuple[str, ...]
    actions: tuple[str, ...]
    observations: tuple[str, ...]
    transitions: sp.csr_matrix
    observation_fn: sp.csr_matrix
    initial: np.ndarray
    discount: float
    enabled: np.ndarray
    labels: Mapping[str, frozenset[int]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "actions", tuple(self.actions))
        object.__setattr__(self, "observations", tuple(self.observations))
        object.__setattr__(self, "transitions", sp.csr_matrix(self.transitions, dtype=float))
        object.__setattr__(self, "observation_fn", sp.csr_matrix(self.observation_fn, dtype=float))
        object.__setattr__(self, "initial", _frozen(np.asarray(self.initial, dtype=float)))
        object.__setattr__(self, "enabled", _frozen(np.asarray(self.enabled, dtype=bool)))
        object.__setattr__(self, "discount", float(self.discount))
        object.__setattr__(
            self, "labels", {k: frozenset(int(i) for i in v) for k, v in dict(self.labels).items()}
        )

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_observations(self) -> int:
        return len(self.observations)

    def row(self, s: int, a: int) -> int:
        return s * self.n_actions + a

    @cached_property
    def action_matrices(self) -> list[sp.csr_matrix]:
        """Per-action ``(S, S)`` transition matrices."""
        A = self.n_actions
        return [self.transitions[a::A] for a in range(A)]

    @cached_property
    def predictors(self) -> list[sp.csr_matrix]:
        """Per-action transposed transition matrices, for belief prediction."""
        return [m.T.tocsr() for m in self.action_matrices]

    @cached_property
    def observation_dense(self) -> np.ndarray:
        return self.observation_fn.toarray()

    @cached_property
    def observation_enabled(self) -> np.ndarray:
        """Actions enabled for each observation, shape ``(Z, A)``.

        An action is enabled for ``z`` when it is enabled in every state that can
        emit ``z``; observations that no state emits enable every action.
        """
        O = self.observation_fn.tocsc()
        out = np.ones((self.n_observations, self.n_actions), dtype=bool)
        for z in range(self.n_observations):
            emitters = O.indices[O.indptr[z]:O.indptr[z + 1]]
            if len(emitters):
                out[z] = self.enabled[emitters].all(axis=0)
        out.flags.writeable = False
        return out

    @cached_property
    def absorbing(self) -> np.ndarray:
        """Boolean mask of states whose every enabled action self-loops with probability 1."""
        S, A = self.n_states, self.n_actions
        T = self.transitions.tocoo()
        loop = np.zeros(S * A)
        sel = T.row // A == T.col
        np.add.at(loop, T.row[sel], T.data[sel])
        loop = loop.reshape(S, A)
        ok = np.where(self.enabled, loop >= 1.0 - PROB_TOL, True)
        return ok.all(axis=1)

    def label(self, name: str) -> frozenset[int]:
        if name not in self.labels:
            raise KeyError(f"unknown label {name!r}")
        return self.labels[name]

    def with_discount(self, discount: float) -> "Pomdp":
        return Pomdp(
            self.states, self.actions, self.observations, self.transitions,
            self.observation_fn, self.initial, discount, self.enabled, self.labels,
        )

    def structurally_equal(self, other: "Pomdp", atol: float = 1e-12) -> bool:
        if (self.states, self.actions, self.observations) != (
            other.states, other.actions, other.observations
        ):
            return False
        if dict(self.labels) != dict(other.labels) or abs(self.discount - other.discount) > atol:
            return False
        if not np.array_equal(self.enabled, other.enabled):
            return False
        return (
            abs(self.transitions - other.transitions).max() <= atol
            and abs(self.observation_fn - other.observation_fn).max() <= atol
            and np.allclose(self.initial, other.initial, atol=atol, rtol=0)
        )


@dataclass(frozen=True, eq=False)
class FeatureBasis:
    """Feature vectors phi(s, a), stored densely as ``(S, A, d)``."""

    values: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3:
            raise ValueError("feature values must have shape (S, A, d)")
        if not np.isfinite(v).all():
            raise ValueError("feature values must be finite")
        object.__setattr__(self, "values", _frozen(v))
        names = tuple(self.names) or tuple(f"f{i}" for i in range(v.shape[2]))
        if len(names) != v.shape[2]:
            raise ValueError("one name per feature required")
        object.__setattr__(self, "names", names)

    @property
    def d(self) -> int:
        return self.values.shape[2]

    def reward(self, theta: "RewardWeights | np.ndarray") -> np.ndarray:
        """R(s, a) = theta . phi(s, a) as an ``(S, A)`` array."""
        th = theta.theta if isinstance(theta, RewardWeights) else np.asarray(theta, dtype=float)
        if th.shape != (self.d,):
            raise ValueError(f"expected {self.d} weights, got shape {th.shape}")
        return self.values @ th


@dataclass(frozen=True, eq=False)
class RewardWeights:
    theta: np.ndarray

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=float).reshape(-1)
        if not np.isfinite(th).all():
            raise ValueError("reward weights must be finite")
        object.__setattr__(self, "theta", _frozen(th))

    def __len__(self):
        return len(self.theta)


class Belief(np.ndarray):
    """A probability vector over states (a thin ndarray subclass)."""

    def __new__(cls, probabilities):
        arr = np.asarray(probabilities, dtype=float).view(cls)
        if arr.ndim != 1:
            raise ValueError("belief must be a vector")
        if (arr < -PROB_TOL).any() or abs(arr.sum() - 1.0) > PROB_TOL:
            raise ValueError("belief must be a probability vector")
        return arr


# ---------------------------------------------------------------------------
# validation


def validate(p: Pomdp) -> list[str]:
    """Return every invariant violation of ``p`` (empty when valid)."""
    out: list[str] = []
    S, A, Z = p.n_states, p.n_actions, p.n_observations
    if not (0.0 < p.discount < 1.0):
        out.append(f"discount out of (0,1): {p.discount}")
    if p.transitions.shape != (S * A, S):
        out.append(f"transition matrix has shape {p.transitions.shape}, expected {(S * A, S)}")
        return out
    if p.observation_fn.shape != (S, Z):
        out.append(f"observation matrix has shape {p.observation_fn.shape}, expected {(S, Z)}")
        return out
    if p.enabled.shape != (S, A):
        out.append(f"enabled mask has shape {p.enabled.shape}, expected {(S, A)}")
        return out
    if p.initial.shape != (S,):
        out.append(f"initial distribution has shape {p.initial.shape}, expected {(S,)}")
        return out

    T = p.transitions.tocoo()
    for r, c, v in zip(T.row, T.col, T.data):
        if v < 0 or not np.isfinite(v):
            out.append(
                f"negative transition entry ({p.states[r // A]}, {p.actions[r % A]}, {p.states[c]}) = {v}"
            )
    sums = np.asarray(p.transitions.sum(axis=1)).ravel().reshape(S, A)
    for s in range(S):
        if not p.enabled[s].any():
            out.append(f"state {p.states[s]} has no enabled action")
        for a in range(A):
            if p.enabled[s, a]:
                if abs(sums[s, a] - 1.0) > PROB_TOL:
                    out.append(f"row ({p.states[s]}, {p.actions[a]}) sums to {sums[s, a]:.12g}")
            elif sums[s, a] != 0.0:
                out.append(f"row ({p.states[s]}, {p.actions[a]}) has entries but the action is disabled")

    O = p.observation_fn.tocoo()
    for r, c, v in zip(O.row, O.col, O.data):
        if v < 0 or not np.isfinite(v):
            out.append(f"negative observation entry ({p.states[r]}, {p.observations[c]}) = {v}")
    osums = np.asarray(p.observation_fn.sum(axis=1)).ravel()
    for s in range(S):
        if abs(osums[s] - 1.0) > PROB_TOL:
            out.append(f"observation row for state {p.states[s]} sums to {osums[s]:.12g}")

    if (p.initial < 0).any():
        out.append("initial distribution has negative entries")
    if abs(p.initial.sum() - 1.0) > PROB_TOL:
        out.append(f"initial distribution sums to {p.initial.sum():.12g}")

    Oc = p.observation_fn.tocsc()
    for z in range(Z):
        emitters = Oc.indices[Oc.indptr[z]:Oc.indptr[z + 1]]
        emitters = emitters[Oc.data[Oc.indptr[z]:Oc.indptr[z + 1]] > 0]
        if len(emitters) > 1:
            masks = p.enabled[emitters]
            if not (masks == masks[0]).all():
                out.append(f"states emitting observation {p.observations[z]} disagree on enabled actions")

    for name, members in p.labels.items():
        bad = [i for i in members if not 0 <= i < S]
        if bad:
            out.append(f"label {name!r} references out-of-range states {bad}")
    return out


def _renormalized(p: Pomdp) -> Pomdp:
    S, A = p.n_states, p.n_actions
    T = p.transitions.tocsr(copy=True)
    sums = np.asarray(T.sum(axis=1)).ravel()
    scale = np.where(sums > 0, 1.0 / np.where(sums > 0, sums, 1.0), 0.0)
    T = sp.diags(scale) @ T
    O = p.observation_fn.tocsr(copy=True)
    osums = np.asarray(O.sum(axis=1)).ravel()
    O = sp.diags(1.0 / osums) @ O
    return Pomdp(
        p.states, p.actions, p.observations, sp.csr_matrix(T), sp.csr_matrix(O),
        p.initial / p.initial.sum(), p.discount, p.enabled, p.labels,
    )


def checked(p: Pomdp) -> Pomdp:
    """Validate ``p`` and return an exactly renormalized copy; raise on violations."""
    violations = validate(p)
    if violations:
        raise ModelValidationError(violations)
    return _renormalized(p)


# ---------------------------------------------------------------------------
# JSON documents


def _index(names: list[str], kind: str) -> dict[str, int]:
    if len(set(names)) != len(names):
        raise ModelValidationError([f"duplicate {kind} names"])
    return {n: i for i, n in enumerate(names)}


def _lookup(idx: Mapping[str, int], name: Any, kind: str) -> int:
    try:
        return idx[name]
    except (KeyError, TypeError):
        raise ModelValidationError([f"unknown {kind} {name!r}"]) from None


def model_from_dict(doc: Mapping[str, Any]) -> tuple[Pomdp, FeatureBasis | None]:
    unknown = set(doc) - _MODEL_KEYS - _EXTRA_KEYS
    if unknown:
        raise ModelValidationError([f"unknown keys {sorted(unknown)}"])
    missing = _MODEL_KEYS - {"features", "labels"} - set(doc)
    if missing:
        raise ModelValidationError([f"missing keys {sorted(missing)}"])

    states, actions, obs = list(doc["states"]), list(doc["actions"]), list(doc["observations"])
    si, ai, zi = _index(states, "state"), _index(actions, "action"), _index(obs, "observation")
    S, A, Z = len(states), len(actions), len(obs)

    rows, cols, vals = [], [], []
    enabled = np.zeros((S, A), dtype=bool)
    for entry in doc["transitions"]:
        if set(entry) != {"s", "a", "to"}:
            raise ModelValidationError([f"transition entry must have keys s, a, to: {entry}"])
        s, a = _lookup(si, entry["s"], "state"), _lookup(ai, entry["a"], "action")
        if enabled[s, a]:
            raise ModelValidationError([f"duplicate transition row ({entry['s']}, {entry['a']})"])
        enabled[s, a] = True
        for t, pr in entry["to"].items():
            rows.append(s * A + a)
            cols.append(_lookup(si, t, "state"))
            vals.append(float(pr))
    T = sp.csr_matrix((vals, (rows, cols)), shape=(S * A, S))

    rows, cols, vals = [], [], []
    seen = set()
    for entry in doc["observation_fn"]:
        if set(entry) != {"s", "dist"}:
            raise ModelValidationError([f"observation entry must have keys s, dist: {entry}"])
        s = _lookup(si, entry["s"], "state")
        if s in seen:
            raise ModelValidationError([f"duplicate observation row for state {entry['s']}"])
        seen.add(s)
        for z, pr in entry["dist"].items():
            rows.append(s)
            cols.append(_lookup(zi, z, "observation"))
            vals.append(float(pr))
    O = sp.csr_matrix((vals, (rows, cols)), shape=(S, Z))

    mu0 = np.zeros(S)
    for s, pr in doc["initial"].items():
        mu0[_lookup(si, s, "state")] = float(pr)

    labels = {
        name: frozenset(_lookup(si, s, "state") for s in members)
        for name, members in doc.get("labels", {}).items()
    }
    p = checked(Pomdp(states, actions, obs, T, O, mu0, float(doc["discount"]), enabled, labels))

    features = None
    if "features" in doc:
        fdoc = doc["features"]
        if not set(fdoc) <= {"d", "entries", "names"} or "d" not in fdoc:
            raise ModelValidationError(["features must have keys d, entries (and optional names)"])
        d = int(fdoc["d"])
        phi = np.zeros((S, A, d))
        for entry in fdoc.get("entries", []):
            vec = np.asarray(entry["vec"], dtype=float)
            if vec.shape != (d,):
                raise ModelValidationError([f"feature vector for ({entry['s']}, {entry['a']}) has length {vec.size}, expected {d}"])
            phi[_lookup(si, entry["s"], "state"), _lookup(ai, entry["a"], "action")] = vec
        features = FeatureBasis(phi, tuple(fdoc.get("names", ())))
    return p, features


def parse_model(text: str) -> tuple[Pomdp, FeatureBasis | None]:
    """Parse a JSON model document into a validated POMDP (and optional features)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelSyntaxError(exc.msg, exc.lineno, exc.colno) from None
    if not isinstance(doc, dict):
        raise ModelSyntaxError("model document must be a JSON object")
    return model_from_dict(doc)


def model_to_dict(p: Pomdp, features: FeatureBasis | None = None) -> dict[str, Any]:
    S, A = p.n_states, p.n_actions
    T = p.transitions
    transitions = []
    for s in range(S):
        for a in range(A):
            if not p.enabled[s, a]:
                continue
            r = s * A + a
            lo, hi = T.indptr[r], T.indptr[r + 1]
            transitions.append({
                "s": p.states[s], "a": p.actions[a],
                "to": {p.states[j]: float(v) for j, v in zip(T.indices[lo:hi], T.data[lo:hi]) if v != 0},
            })
    O = p.observation_fn
    obs_fn = []
    for s in range(S):
        lo, hi = O.indptr[s], O.indptr[s + 1]
        obs_fn.append({
            "s": p.states[s],
            "dist": {p.observations[z]: float(v) for z, v in zip(O.indices[lo:hi], O.data[lo:hi]) if v != 0},
        })
    doc: dict[str, Any] = {
        "states": list(p.states),
        "actions": list(p.actions),
        "observations": list(p.observations),
        "discount": p.discount,
        "initial": {p.states[s]: float(v) for s, v in enumerate(p.initial) if v != 0},
        "transitions": transitions,
        "observation_fn": obs_fn,
        "labels": {k: [p.states[i] for i in sorted(v)] for k, v in sorted(p.labels.items())},
    }
    if features is not None:
        entries = []
        for s in range(S):
            for a in range(A):
                vec = features.values[s, a]
                if np.any(vec != 0):
                    entries.append({"s": p.states[s], "a": p.actions[a], "vec": [float(x) for x in vec]})
        doc["features"] = {"d": features.d, "names": list(features.names), "entries": entries}
    return doc


def serialize_model(p: Pomdp, features: FeatureBasis | None = None, **extra: Any) -> str:
    doc = model_to_dict(p, features)
    doc.update(extra)
    return json.dumps(doc, indent=1)


# ---------------------------------------------------------------------------
# beliefs


def belief_update(p: Pomdp, b: np.ndarray, action: int, obs: int) -> Belief:
    """Bayes filter: b'(s') ~ O(z|s') sum_s P(s'|s,a) b(s)."""
    if not 0 <= action < p.n_actions or not 0 <= obs < p.n_observations:
        raise IndexError("action or observation out of range")
    pred = p.predictors[action] @ np.asarray(b, dtype=float)
    post = pred * p.observation_dense[:, obs]
    norm = post.sum()
    if norm <= 0.0:
        raise InconsistentTraceError(
            f"observation {p.observations[obs]} has probability 0 after action {p.actions[action]}"
        )
    return Belief(post / norm)


def initial_belief(p: Pomdp, obs: int | None = None) -> Belief:
    """The prior mu0, conditioned on the first observation when one is given."""
    b = p.initial.copy()
    if obs is not None:
        b = b * p.observation_dense[:, obs]
        if b.sum() <= 0.0:
            raise InconsistentTraceError(f"initial observation {p.observations[obs]} has probability 0")
    return Belief(b / b.sum())
