"""Reach / safety / until specifications compiled to absorbing-target reachability."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .model import Pomdp

_REACH = re.compile(r"^\s*F\s+(\w+)\s*$")
_SAFE = re.compile(r"^\s*G\s*!\s*(\w+)\s*$")
_UNTIL = re.compile(r"^\s*!\s*(\w+)\s+U\s+(\w+)\s*$")


class SpecError(ValueError):
    pass


class SpecUnsatisfiable(SpecError):
    pass


@dataclass(frozen=True)
class SpecFormula:
    """``kind`` is one of ``reach`` (F goal), ``safety`` (G !bad), ``until`` (!bad U goal)."""

    kind: str
    lam: float
    goal: str | None = None
    bad: str | None = None

    def __post_init__(self):
        if self.kind not in ("reach", "safety", "until"):
            raise SpecError(f"unsupported formula kind {self.kind!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise SpecError(f"threshold {self.lam} outside [0, 1]")
        if self.kind in ("reach", "until") and not self.goal:
            raise SpecError(f"{self.kind} needs a goal label")
        if self.kind in ("safety", "until") and not self.bad:
            raise SpecError(f"{self.kind} needs a bad label")

    @classmethod
    def parse(cls, text: str, lam: float) -> "SpecFormula":
        if m := _REACH.match(text):
            return cls("reach", lam, goal=m.group(1))
        if m := _SAFE.match(text):
            return cls("safety", lam, bad=m.group(1))
        if m := _UNTIL.match(text):
            return cls("until", lam, bad=m.group(1), goal=m.group(2))
        raise SpecError(f"cannot parse specification {text!r}; expected 'F g', 'G !b' or '!b U g'")

    def __str__(self):
        return {"reach": f"F {self.goal}", "safety": f"G !{self.bad}", "until": f"!{self.bad} U {self.goal}"}[self.kind]

    def holds_on(self, labels: dict[str, frozenset[int]], states: np.ndarray) -> np.ndarray:
        """Evaluate the formula on finite state paths ``states[episode, t]``.

        Safety counts a path as satisfied when it avoids ``bad`` over the whole window.
        """
        bad = np.isin(states, list(labels[self.bad])) if self.bad else np.zeros(states.shape, bool)
        goal = np.isin(states, list(labels[self.goal])) if self.goal else np.zeros(states.shape, bool)
        if self.kind == "safety":
            return ~bad.any(axis=1)
        if self.kind == "reach":
            return goal.any(axis=1)
        horizon = states.shape[1]
        first_bad = np.where(bad.any(axis=1), bad.argmax(axis=1), horizon)
        good = goal & ~bad
        first_goal = np.where(good.any(axis=1), good.argmax(axis=1), horizon)
        return first_goal < first_bad


@dataclass(frozen=True, eq=False)
class CompiledSpec:
    """``model`` has blocked and target states absorbing; Pr(reach target) on it is Pr(formula).

    Solvers keep the original dynamics and cut the reachability flow at
    ``target`` and ``blocked`` instead, which gives the same probability.
    """

    model: Pomdp
    target: frozenset[int]
    blocked: frozenset[int]
    lam: float
    formula: SpecFormula


def _make_absorbing(p: Pomdp, states) -> Pomdp:
    states = sorted(set(states))
    if not states:
        return p
    S, A = p.n_states, p.n_actions
    T = p.transitions.tolil(copy=True)
    for s in states:
        for a in range(A):
            if p.enabled[s, a]:
                r = s * A + a
                T.rows[r] = [s]
                T.data[r] = [1.0]
    return Pomdp(
        p.states, p.actions, p.observations, sp.csr_matrix(T), p.observation_fn,
        p.initial, p.discount, p.enabled, p.labels,
    )


def can_reach(p: Pomdp, goal: np.ndarray) -> np.ndarray:
    """States with a positive-probability path (under some policy) into ``goal``."""
    S, A = p.n_states, p.n_actions
    T = p.transitions.tocoo()
    G = sp.csr_matrix((np.ones(T.nnz), (T.row // A, T.col)), shape=(S, S))
    seen = goal.copy()
    frontier = goal.astype(float)
    while frontier.any():
        new = (G @ frontier > 0) & ~seen
        seen |= new
        frontier = new.astype(float)
    return seen


def compile_spec(p: Pomdp, f: SpecFormula) -> CompiledSpec:
    """Reduce ``f`` to reaching a target set on a transformed copy of ``p``.

    Bad states are blocked and goal states are targets; both become absorbing.
    For safety the target is the set of states from which no policy can reach a
    bad state. Target states are made absorbing by self-loops, which keeps the
    state space aligned with ``p``.
    """
    for name in (f.goal, f.bad):
        if name is not None and name not in p.labels:
            raise SpecError(f"unknown label {name!r}")
    S = p.n_states
    bad = np.zeros(S, dtype=bool)
    if f.bad:
        bad[list(p.labels[f.bad])] = True
    goal = np.zeros(S, dtype=bool)
    if f.goal:
        goal[list(p.labels[f.goal])] = True

    if f.kind == "reach":
        target = goal
    elif f.kind == "until":
        target = goal & ~bad
    else:
        target = ~can_reach(p, bad)
    if not target.any():
        raise SpecUnsatisfiable("specification unsatisfiable with probability > 0: empty target set")
    q = _make_absorbing(p, np.flatnonzero((bad | target) & ~p.absorbing))

    def ids(mask):
        return frozenset(int(i) for i in np.flatnonzero(mask))

    return CompiledSpec(q, ids(target), ids(bad), f.lam, f)
