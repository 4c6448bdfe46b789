import numpy as np
import pytest
import scipy.sparse as sp

from pomirl.flow import (
    Policy,
    bellman_flow_solve,
    causal_entropy,
    feature_expectation,
    flow_sources,
    realized_cost,
    spec_flow_solve,
    spec_penalty,
)
from pomirl.model import Pomdp

from conftest import random_features, random_policy_matrix, random_pomdp


def dense_flow(p, pi):
    """Reference: (I - gamma P^T)^-1 mu0 with a dense matrix."""
    S, A = p.n_states, p.n_actions
    T = p.transitions.toarray().reshape(S, A, S)
    P = np.einsum("sa,sat->st", pi, T)
    return np.linalg.solve(np.eye(S) - p.discount * P.T, p.initial)


def reach_probability(p, pi, target, blocked, iters=20000):
    """Reference: Pr(hit target before blocked) by value iteration on absorption probabilities."""
    S, A = p.n_states, p.n_actions
    T = p.transitions.toarray().reshape(S, A, S)
    P = np.einsum("sa,sat->st", pi, T)
    x = np.zeros(S)
    tgt = np.zeros(S, bool)
    tgt[list(target)] = True
    blk = np.zeros(S, bool)
    blk[list(blocked)] = True
    for _ in range(iters):
        x = np.where(tgt, 1.0, np.where(blk, 0.0, P @ x))
    return float(p.initial @ x)


def test_flow_matches_dense_solve():
    rng = np.random.default_rng(0)
    for _ in range(10):
        p = random_pomdp(rng, S=6, A=3, Z=3, discount=0.95)
        pol = Policy(random_policy_matrix(rng, 3, 3))
        vc = bellman_flow_solve(p, pol)
        np.testing.assert_allclose(vc.mu, dense_flow(p, pol.state_policy(p)), atol=1e-10)
        np.testing.assert_allclose(vc.nu.sum(axis=1), vc.mu, atol=1e-12)
        assert vc.mu.sum() == pytest.approx(1 / (1 - p.discount), abs=1e-8)


def test_state_policy_recovered_from_counts():
    rng = np.random.default_rng(1)
    p = random_pomdp(rng, S=5, A=2, Z=2)
    pol = Policy(random_policy_matrix(rng, 2, 2))
    vc = bellman_flow_solve(p, pol)
    np.testing.assert_allclose(vc.state_policy, pol.state_policy(p), atol=1e-12)


def test_policy_rejects_bad_rows():
    with pytest.raises(ValueError):
        Policy(np.array([[0.5, 0.6]]))
    with pytest.raises(ValueError):
        Policy(np.array([0.5, 0.5]))


def test_uniform_policy_respects_enabled_actions():
    T = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 0.0]]))
    O = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 1.0]]))
    enabled = np.array([[True, True], [True, False]])
    p = Pomdp(["a", "b"], ["x", "y"], ["za", "zb"], T, O, [1.0, 0.0], 0.9, enabled)
    np.testing.assert_allclose(Policy.uniform(p).sigma, [[0.5, 0.5], [1.0, 0.0]])


def test_entropy_of_uniform_policy():
    rng = np.random.default_rng(2)
    p = random_pomdp(rng, S=4, A=3, Z=2)
    vc = bellman_flow_solve(p, Policy.uniform(p))
    assert causal_entropy(vc.nu, vc.mu) == pytest.approx(np.log(3) / (1 - p.discount), rel=1e-10)


def test_entropy_zero_for_deterministic_policy():
    rng = np.random.default_rng(3)
    p = random_pomdp(rng, S=4, A=2, Z=1)
    vc = bellman_flow_solve(p, Policy(np.array([[1.0, 0.0]])))
    assert causal_entropy(vc.nu, vc.mu) == 0.0


def test_realized_cost_decomposes():
    rng = np.random.default_rng(4)
    p = random_pomdp(rng, S=5, A=2, Z=3)
    f = random_features(rng, p, d=3)
    theta = rng.normal(size=3)
    vc = bellman_flow_solve(p, Policy(random_policy_matrix(rng, 3, 2)))
    expected = causal_entropy(vc.nu, vc.mu) + theta @ feature_expectation(vc, f)
    assert realized_cost(vc, theta, f) == pytest.approx(expected, rel=1e-12)


def test_spec_mass_equals_reach_probability():
    rng = np.random.default_rng(5)
    for _ in range(5):
        p = random_pomdp(rng, S=7, A=2, Z=3, absorbing=(5, 6))
        pol = Policy(random_policy_matrix(rng, 3, 2))
        sv = spec_flow_solve(p, pol, {5}, {4})
        ref = reach_probability(p, pol.state_policy(p), {5}, {4})
        assert not sv.regularized
        assert sv.target_mass == pytest.approx(ref, abs=1e-9)
        assert not sv.sources[[4, 5, 6]].any()
        assert (sv.nu_sp[~sv.sources] == 0).all()


def test_spec_flow_regularizes_recurrent_sources():
    # state 0 loops forever under action 0, so flow from it never exits
    T = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]]))
    O = sp.csr_matrix(np.eye(2))
    p = Pomdp(["a", "b"], ["stay", "go"], ["za", "zb"], T, O, [1.0, 0.0], 0.9, np.ones((2, 2), bool))
    sv = spec_flow_solve(p, Policy(np.array([[1.0, 0.0], [0.5, 0.5]])), {1})
    assert sv.regularized
    assert sv.target_mass == pytest.approx(0.0, abs=1e-12)
    assert sv.mu_sp[0] == pytest.approx(1e6, rel=1e-6)


def test_spec_flow_needs_target():
    rng = np.random.default_rng(6)
    p = random_pomdp(rng)
    with pytest.raises(ValueError):
        spec_flow_solve(p, Policy.uniform(p), set())


def test_flow_sources_and_penalty():
    rng = np.random.default_rng(7)
    p = random_pomdp(rng, S=5, absorbing=(4,))
    np.testing.assert_array_equal(flow_sources(p, {1}, {2}), [True, False, False, True, False])
    assert spec_penalty(0.95, 0.9, 10.0) == 0.0
    assert spec_penalty(0.8, 0.9, 10.0) == pytest.approx(-1.0)
