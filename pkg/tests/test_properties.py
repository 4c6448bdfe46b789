"""Structural invariants of flows, entropy, the SCP linearization and the IRL gradient."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pomirl.flow import Policy, bellman_flow_solve, causal_entropy, feature_expectation
from pomirl.irl import irl_gradient
from pomirl.scp import ScpParams, SpecConstraint, build_linearized_lp, evaluate_point, scp_forward

from conftest import random_features, random_policy_matrix, random_pomdp
from test_scp import point_vector

seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=100, deadline=None)
@given(seeds, st.integers(2, 8), st.integers(1, 4), st.integers(1, 4), st.floats(0.5, 0.999))
def test_total_flow_is_one_over_one_minus_gamma(seed, S, A, Z, gamma):
    rng = np.random.default_rng(seed)
    p = random_pomdp(rng, S=S, A=A, Z=Z, discount=gamma)
    vc = bellman_flow_solve(p, Policy(random_policy_matrix(rng, Z, A)))
    assert vc.mu.sum() == pytest.approx(1 / (1 - gamma), abs=1e-6)


def _run_recorded(seed, spec=False):
    rng = np.random.default_rng(seed)
    p = random_pomdp(rng, S=6, A=3, Z=3, discount=0.95, absorbing=(5,) if spec else ())
    f = random_features(rng, p, d=2)
    theta = rng.normal(size=2) * 3
    constraint = SpecConstraint({5}, 0.5) if spec else None
    params = ScpParams(max_iters=40)
    points = []

    def cb(it, point, row):
        points.append((row["accepted"], point))

    init = Policy(random_policy_matrix(rng, 3, 3))
    res = scp_forward(p, f, theta, init=init, spec=constraint, params=params, callback=cb)
    return p, f, theta, constraint, params, res, points


@pytest.mark.parametrize("seed, spec", [(0, False), (1, True), (2, False), (3, True)])
def test_accepted_iterates_are_exact_and_costs_monotone(seed, spec):
    p, f, theta, constraint, params, res, points = _run_recorded(seed, spec)
    assert all(b >= a for a, b in zip(res.cost_trace, res.cost_trace[1:]))
    for accepted, point in points:
        if not accepted:
            continue
        vc = point.counts
        flow = vc.mu - p.initial - p.discount * (p.transitions.T @ vc.nu.ravel())
        assert np.abs(flow).max() < 1e-8
        assert np.abs(vc.nu - vc.mu[:, None] * point.policy.state_policy(p)).max() < 1e-8
        # every accepted point is also a linearization point: zero-slack feasibility
        lp = build_linearized_lp(p, f, theta, point, 1.0 + 1e-3, constraint, params)
        _, viol = lp.evaluate(point_vector(lp, point, p))
        assert viol < 1e-8


def _log_sum_entropy(nu):
    return causal_entropy(nu, nu.sum(axis=1))


def test_entropy_is_concave_in_counts():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        S, A = rng.integers(1, 5), rng.integers(2, 5)
        x = rng.random((S, A)) * rng.integers(1, 20)
        y = rng.random((S, A)) * rng.integers(1, 20)
        t = rng.random()
        lhs = _log_sum_entropy(t * x + (1 - t) * y)
        assert lhs >= t * _log_sum_entropy(x) + (1 - t) * _log_sum_entropy(y) - 1e-9


def test_linearized_entropy_matches_finite_differences():
    rng = np.random.default_rng(12)
    for _ in range(20):
        p = random_pomdp(rng, S=4, A=3, Z=2)
        f = random_features(rng, p, d=1)
        pol = Policy(random_policy_matrix(rng, 2, 3))
        point, _ = evaluate_point(p, pol, f, [0.0], None, ScpParams())
        lp = build_linearized_lp(p, f, [0.0], point, 1.1)
        c = lp.cost()
        mu, nu = point.counts.mu.copy(), point.counts.nu.copy()
        h = 1e-6
        mu_slc, _ = lp.blocks["mu"]
        nu_slc, _ = lp.blocks["nu"]
        for s in range(p.n_states):
            up, dn = mu.copy(), mu.copy()
            up[s] += h
            dn[s] -= h
            fd = (causal_entropy(nu, up) - causal_entropy(nu, dn)) / (2 * h)
            assert c[mu_slc][s] == pytest.approx(fd, rel=1e-5)
        flat = c[nu_slc].reshape(nu.shape)
        for s in range(p.n_states):
            for a in range(p.n_actions):
                up, dn = nu.copy(), nu.copy()
                up[s, a] += h
                dn[s, a] -= h
                fd = (causal_entropy(up, mu) - causal_entropy(dn, mu)) / (2 * h)
                assert flat[s, a] == pytest.approx(fd, rel=1e-5)
        # homogeneity: the linearization is exact at the point itself
        x = point_vector(lp, point, p)
        assert c @ x == pytest.approx(causal_entropy(nu, mu), rel=1e-9)


def test_irl_gradient_matches_dual_finite_differences():
    rng = np.random.default_rng(13)
    p = random_pomdp(rng, S=4, A=2, Z=2, discount=0.8)
    f = random_features(rng, p, d=2)
    r_bar = np.array([0.3, -0.7])
    params = ScpParams(rho_lim=1e-7, stall_tol=1e-12, max_iters=300)

    def solve(theta):
        return scp_forward(p, f, theta, params=params)

    def dual(theta):
        return solve(theta).cost - theta @ r_bar

    theta = np.array([0.5, -1.0])
    res = solve(theta)
    grad = irl_gradient(feature_expectation(res.counts, f), r_bar)
    h = 1e-3
    fd = np.array([(dual(theta + h * e) - dual(theta - h * e)) / (2 * h) for e in np.eye(2)])
    np.testing.assert_allclose(grad, fd, rtol=1e-3)
