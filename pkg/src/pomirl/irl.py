"""Outer inverse-RL loop: feature matching by gradient descent on the reward weights."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .flow import Policy, feature_expectation
from .memory import ProductPomdp
from .model import FeatureBasis, Pomdp, belief_update, initial_belief
from .scp import ScpAbort, ScpParams, ScpResult, SpecConstraint, scp_forward

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DemoSet:
    """Observation/action demonstrations with one belief per (z_i, a_i) pair.

    ``beliefs[n][i]`` is the belief over states when ``actions[n][i]`` was taken,
    i.e. after seeing ``observations[n][i]``; the first one is the prior
    conditioned on the first observation.
    """

    observations: list[np.ndarray]
    actions: list[np.ndarray]
    beliefs: list[np.ndarray]

    def __post_init__(self):
        if not (len(self.observations) == len(self.actions) == len(self.beliefs)):
            raise ValueError("demo lists must have equal length")
        for z, a, b in zip(self.observations, self.actions, self.beliefs):
            if not (len(z) == len(a) == len(b)):
                raise ValueError("each demo needs one observation and one belief per action")
            if len(b) and (np.abs(np.asarray(b).sum(axis=1) - 1.0).max() > 1e-6 or (np.asarray(b) < -1e-12).any()):
                raise ValueError("beliefs must be probability vectors")

    @property
    def n(self) -> int:
        return len(self.actions)

    def to_jsonl(self, with_beliefs: bool = False) -> str:
        lines = []
        for z, a, b in zip(self.observations, self.actions, self.beliefs):
            doc = {"obs": np.asarray(z).tolist(), "act": np.asarray(a).tolist()}
            if with_beliefs:
                doc["beliefs"] = np.asarray(b).tolist()
            lines.append(json.dumps(doc))
        return "\n".join(lines) + "\n"


def belief_trajectory(p: Pomdp, observations, actions) -> np.ndarray:
    """Filtered beliefs b_0..b_{T-1}; b_i conditions on z_0..z_i and a_0..a_{i-1}."""
    T = len(actions)
    out = np.zeros((T, p.n_states))
    if T == 0:
        return out
    b = initial_belief(p, int(observations[0]))
    out[0] = b
    for i in range(1, T):
        b = belief_update(p, b, int(actions[i - 1]), int(observations[i]))
        out[i] = b
    return out


def make_demoset(trajs, p: Pomdp) -> DemoSet:
    """Attach reconstructed beliefs to trajectories (anything with ``observations`` and ``actions``)."""
    obs = [np.asarray(t.observations, dtype=int) for t in trajs]
    act = [np.asarray(t.actions, dtype=int) for t in trajs]
    return DemoSet(obs, act, [belief_trajectory(p, z, a) for z, a in zip(obs, act)])


def read_demos(text: str, p: Pomdp) -> DemoSet:
    """Parse JSON lines ``{"obs": [...], "act": [...], "beliefs"?: [[...]]}``."""
    obs, act, bel = [], [], []
    for k, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        doc = json.loads(line)
        z, a = np.asarray(doc["obs"], dtype=int), np.asarray(doc["act"], dtype=int)
        if len(z) != len(a):
            raise ValueError(f"demo line {k}: obs and act lengths differ")
        if ((a < 0) | (a >= p.n_actions)).any() or ((z < 0) | (z >= p.n_observations)).any():
            raise ValueError(f"demo line {k}: index out of range")
        obs.append(z)
        act.append(a)
        bel.append(np.asarray(doc["beliefs"], float) if "beliefs" in doc else belief_trajectory(p, z, a))
    return DemoSet(obs, act, bel)


def empirical_feature_expectation(d: DemoSet, features: FeatureBasis, discount: float) -> np.ndarray:
    """(1/N) sum_n sum_i gamma^i sum_s b_i(s) phi(s, a_i)."""
    total = np.zeros(features.d)
    for a, b in zip(d.actions, d.beliefs):
        if len(a) == 0:
            continue
        w = discount ** np.arange(len(a))
        phi = features.values[:, np.asarray(a, dtype=int), :]  # (S, T, d)
        total += np.einsum("t,ts,std->d", w, np.asarray(b), phi)
    return total / max(d.n, 1)


def irl_gradient(r_sigma, r_bar) -> np.ndarray:
    r_sigma, r_bar = np.asarray(r_sigma, float), np.asarray(r_bar, float)
    if r_sigma.shape != r_bar.shape:
        raise ValueError(f"feature vectors differ in shape: {r_sigma.shape} vs {r_bar.shape}")
    return r_sigma - r_bar


@dataclass(frozen=True)
class IrlParams:
    """``step_size`` is either a callable k -> eta(k) or a base rate eta0 for eta0 / sqrt(k).

    With ``normalize`` the k-th rate is further divided by max(1, |gradient|_inf),
    so no single step moves a weight by more than eta0 / sqrt(k). Features such
    as elapsed time have expectations of order 1 / (1 - gamma) under poor
    policies, and a raw step on them can throw theta far away.
    """

    step_size: float | Callable[[int], float] = 1.0
    outer_iters: int = 30
    theta_init: tuple | None = None
    scp: ScpParams = ScpParams()
    gap_tol: float = 1e-2
    normalize: bool = False

    def __post_init__(self):
        if self.outer_iters < 1:
            raise ValueError("outer_iters must be at least 1")
        if isinstance(self.step_size, (int, float)) and self.step_size <= 0:
            raise ValueError("step size must be positive")

    def eta(self, k: int, grad=None) -> float:
        if callable(self.step_size):
            val = float(self.step_size(k))
        else:
            val = float(self.step_size) / math.sqrt(k)
        if self.normalize and grad is not None:
            val /= max(1.0, float(np.abs(grad).max(initial=0.0)))
        if not val > 0:
            raise ValueError(f"step size at iteration {k} is not positive")
        return val


@dataclass
class IrlResult:
    theta: np.ndarray
    policy: Policy
    forward: ScpResult | None
    history: list[dict] = field(default_factory=list)

    def write_history(self, path) -> None:
        if not self.history:
            return
        d = len(self.history[0]["theta"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", *[f"theta_{i}" for i in range(d)], "feature_gap", "forward_cost", "eta"])
            for h in self.history:
                w.writerow([h["iter"], *h["theta"], h["feature_gap"], h["forward_cost"], h["eta"]])


class IrlAbort(RuntimeError):
    def __init__(self, message: str, partial: IrlResult):
        super().__init__(message)
        self.partial = partial


def irl_loop(
    model: Pomdp | ProductPomdp,
    features: FeatureBasis,
    demos: DemoSet,
    spec: SpecConstraint | None = None,
    params: IrlParams = IrlParams(),
    callback=None,
) -> IrlResult:
    """Alternate warm-started forward solves with gradient steps on theta.

    ``features`` and ``demos`` live on the base model; for a product learner the
    features are lifted and ``spec`` refers to product states.
    """
    if isinstance(model, ProductPomdp):
        work, base = model.product, model.base
        work_features = model.lift_features(features)
    else:
        work, base, work_features = model, model, features
    if params.scp.gamma is not None:
        work = work.with_discount(params.scp.gamma)
    discount = work.discount
    if features.values.shape[:2] != (base.n_states, base.n_actions):
        raise ValueError("features do not match the demonstration model")
    r_bar = empirical_feature_expectation(demos, features, discount)
    theta = np.zeros(features.d) if params.theta_init is None else np.asarray(params.theta_init, float).copy()
    if theta.shape != (features.d,):
        raise ValueError("theta_init has the wrong dimension")
    policy = Policy.uniform(work)
    history: list[dict] = []
    fwd = None
    for k in range(1, params.outer_iters + 1):
        try:
            fwd = scp_forward(work, work_features, theta, policy, spec, params.scp)
        except ScpAbort as exc:
            raise IrlAbort(f"forward solve failed at outer iteration {k}: {exc}", IrlResult(theta, policy, fwd, history))
        policy, theta_used = fwd.policy, theta.copy()
        r_sigma = feature_expectation(fwd.counts, work_features)
        grad = irl_gradient(r_sigma, r_bar)
        gap = float(np.abs(grad).max())
        eta = params.eta(k, grad)
        history.append({
            "iter": k, "theta": theta.tolist(), "feature_gap": gap, "forward_cost": fwd.cost, "eta": eta,
            "r_sigma": r_sigma.tolist(),
        })
        log.info("irl iter %d gap %.4g theta %s", k, gap, np.round(theta, 4))
        if callback is not None:
            callback(k, theta, fwd)
        if gap < params.gap_tol:
            break
        theta = theta - eta * grad
    # report the weights that produced the returned policy
    return IrlResult(theta_used, policy, fwd, history)
