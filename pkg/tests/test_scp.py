import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from pomirl import lp as lpmod
from pomirl.flow import Policy, bellman_flow_solve, realized_cost, spec_flow_solve
from pomirl.scp import (
    ScpAbort,
    ScpParams,
    SpecConstraint,
    build_linearized_lp,
    evaluate_point,
    scp_forward,
    write_iteration_log,
)

from conftest import random_features, random_policy_matrix, random_pomdp


def point_vector(lp, point, p):
    """The LP variables set to the linearization point with zero slack."""
    x = np.zeros(lp.n_vars)
    fill = {"mu": point.counts.mu, "nu": point.counts.nu, "sigma": point.policy.sigma}
    if point.spec is not None:
        fill.update(mu_sp=point.spec.mu_sp, nu_sp=point.spec.nu_sp)
    for name, vals in fill.items():
        slc, shape = lp.blocks[name]
        x[slc] = np.asarray(vals).ravel()
    if point.spec is not None:
        slc, _ = lp.blocks["gamma_sp"]
        x[slc] = 0.0
    return x


def test_linearization_point_is_feasible_without_slack():
    rng = np.random.default_rng(0)
    for _ in range(5):
        p = random_pomdp(rng, S=6, A=3, Z=3, absorbing=(5,))
        f = random_features(rng, p, d=2)
        pol = Policy(random_policy_matrix(rng, 3, 3))
        spec = SpecConstraint({5}, 0.0)
        point, _ = evaluate_point(p, pol, f, [1.0, 1.0], spec, ScpParams())
        lp = build_linearized_lp(p, f, [1.0, 1.0], point, 1.2, spec)
        _, viol = lp.evaluate(point_vector(lp, point, p))
        assert viol < 1e-9


def test_single_observation_forward_is_uniform():
    rng = np.random.default_rng(1)
    p = random_pomdp(rng, S=4, A=3, Z=1)
    f = random_features(rng, p, d=2)
    res = scp_forward(p, f, np.zeros(2))
    np.testing.assert_allclose(res.policy.sigma, 1 / 3, atol=1e-6)
    assert res.cost == pytest.approx(np.log(3) / (1 - p.discount), rel=1e-8)


def test_matches_one_dimensional_search():
    """Two actions and one observation: the policy is a single number we can search directly."""
    rng = np.random.default_rng(2)
    p = random_pomdp(rng, S=5, A=2, Z=1, discount=0.9)
    f = random_features(rng, p, d=1)
    theta = np.array([2.0])

    def neg_cost(q):
        return -realized_cost(bellman_flow_solve(p, Policy(np.array([[q, 1 - q]]))), theta, f)

    ref = minimize_scalar(neg_cost, bounds=(1e-9, 1 - 1e-9), method="bounded", options={"xatol": 1e-12})
    res = scp_forward(p, f, theta)
    assert res.cost == pytest.approx(-ref.fun, abs=1e-6)
    assert res.policy.sigma[0, 0] == pytest.approx(ref.x, abs=1e-3)


def test_accepted_costs_never_decrease_and_flows_are_exact():
    rng = np.random.default_rng(3)
    p = random_pomdp(rng, S=8, A=3, Z=3, discount=0.95)
    f = random_features(rng, p, d=2)
    seen = []

    def cb(it, point, row):
        if row["accepted"]:
            seen.append(point)

    res = scp_forward(p, f, [3.0, -2.0], params=ScpParams(max_iters=60), callback=cb)
    assert np.all(np.diff(res.cost_trace) >= 0)
    assert res.status in ("converged", "stalled", "max_iters")
    for point in seen:
        vc = point.counts
        resid = vc.mu - p.initial - p.discount * (p.transitions.T @ vc.nu.ravel())
        assert np.abs(resid).max() < 1e-8
        assert np.abs(vc.nu - vc.mu[:, None] * point.policy.state_policy(p)).max() < 1e-8


def test_spec_constraint_is_met():
    rng = np.random.default_rng(4)
    p = random_pomdp(rng, S=7, A=3, Z=3, absorbing=(5, 6))
    f = random_features(rng, p, d=1)
    uniform_mass = spec_flow_solve(p, Policy.uniform(p), {5}, {6}).target_mass
    best = scp_forward(p, f, [0.0], spec=SpecConstraint({5}, 1.0, {6}), params=ScpParams(beta_sp=1e3))
    lam = uniform_mass + 0.5 * (best.spec_visitation.target_mass - uniform_mass)
    res = scp_forward(p, f, [0.0], spec=SpecConstraint({5}, lam, {6}), params=ScpParams(beta_sp=1e3))
    assert res.spec_visitation.target_mass >= lam - 1e-4
    assert res.spec_visitation.target_mass > uniform_mass


def test_abort_carries_partial_result(monkeypatch):
    rng = np.random.default_rng(5)
    p = random_pomdp(rng)
    f = random_features(rng, p)
    monkeypatch.setitem(lpmod.BACKENDS, "highs-warm", lambda lp: ("infeasible", None, "forced"))
    with pytest.raises(ScpAbort) as err:
        scp_forward(p, f, [1.0, 1.0])
    assert err.value.partial.status == "aborted"
    assert len(err.value.partial.cost_trace) == 1


@pytest.mark.parametrize(
    "kwargs",
    [dict(beta=-1.0), dict(rho_init=1.0), dict(rho0=0.5), dict(rho_lim=0.5), dict(max_iters=0), dict(gamma=1.0)],
)
def test_params_validation(kwargs):
    with pytest.raises(ValueError):
        ScpParams(**kwargs)


def test_iteration_log_csv(tmp_path):
    rng = np.random.default_rng(6)
    p = random_pomdp(rng)
    f = random_features(rng, p)
    res = scp_forward(p, f, [1.0, 0.0], params=ScpParams(max_iters=5))
    path = tmp_path / "log.csv"
    write_iteration_log(res.log, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,rho,accepted,realized_cost,spec_mass,slack_max"
    assert len(lines) == len(res.log) + 1


def test_feature_mismatch_rejected():
    rng = np.random.default_rng(7)
    p = random_pomdp(rng, S=4)
    q = random_pomdp(rng, S=5)
    with pytest.raises(ValueError):
        scp_forward(p, random_features(rng, q), [1.0, 1.0])
