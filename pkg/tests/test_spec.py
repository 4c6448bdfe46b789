import numpy as np
import pytest

from pomirl.flow import Policy, spec_flow_solve
from pomirl.sim import simulate_paths
from pomirl.spec import SpecError, SpecFormula, SpecUnsatisfiable, can_reach, compile_spec


def test_parse_all_forms():
    assert SpecFormula.parse("F goal", 0.9) == SpecFormula("reach", 0.9, goal="goal")
    assert SpecFormula.parse("G !bad", 0.5) == SpecFormula("safety", 0.5, bad="bad")
    assert SpecFormula.parse("G!bad", 0.5).kind == "safety"
    assert SpecFormula.parse(" !obstacle U exit ", 1.0) == SpecFormula("until", 1.0, goal="exit", bad="obstacle")
    for text in ("F goal", "G !bad", "!b U g"):
        assert str(SpecFormula.parse(text, 0.1)) == text


@pytest.mark.parametrize("text", ["X goal", "F", "G bad", "a U b", ""])
def test_parse_rejects_unsupported(text):
    with pytest.raises(SpecError):
        SpecFormula.parse(text, 0.9)


def test_threshold_bounds():
    with pytest.raises(SpecError):
        SpecFormula("reach", 1.5, goal="g")


def test_unknown_label(maze_bench):
    with pytest.raises(SpecError, match="unknown label"):
        compile_spec(maze_bench.model, SpecFormula("reach", 0.9, goal="nowhere"))


def test_maze_safety_target(maze_bench):
    p = maze_bench.model
    c = compile_spec(p, SpecFormula.parse("G !bad", 0.9))
    names = {p.states[s] for s in c.target}
    assert names == {"s13", "end"}
    assert c.blocked == p.label("bad")
    assert c.model.absorbing[sorted(c.blocked | c.target)].all()
    # original model keeps its dynamics
    assert not p.absorbing[sorted(p.label("bad"))].all()


def test_until_excludes_bad_goals(maze_bench):
    p = maze_bench.model
    c = compile_spec(p, SpecFormula("until", 0.9, goal="goal", bad="bad"))
    assert c.target == p.label("goal") - p.label("bad")


def test_unsatisfiable_when_bad_reachable_everywhere(maze_bench):
    p = maze_bench.model
    everything = dict(p.labels, all=frozenset(range(p.n_states)))
    q = type(p)(p.states, p.actions, p.observations, p.transitions, p.observation_fn,
                p.initial, p.discount, p.enabled, everything)
    with pytest.raises(SpecUnsatisfiable):
        compile_spec(q, SpecFormula("safety", 0.9, bad="all"))


def test_can_reach_on_maze(maze_bench):
    p = maze_bench.model
    bad = np.zeros(p.n_states, bool)
    bad[sorted(p.label("bad"))] = True
    r = can_reach(p, bad)
    assert not r[p.states.index("end")]
    assert r[p.states.index("s1")]


def test_spec_mass_matches_monte_carlo(maze_bench):
    """Flow probability of the compiled target equals the simulated satisfaction rate."""
    p = maze_bench.model
    f = SpecFormula("until", 0.9, goal="goal", bad="bad")
    c = compile_spec(p, f)
    pol = Policy.uniform(p)
    sv = spec_flow_solve(p, pol, c.target, c.blocked)
    states, _, _ = simulate_paths(p, pol, 400, 40000, seed=3)
    hits = f.holds_on(p.labels, states)
    se = np.sqrt(sv.target_mass * (1 - sv.target_mass) / len(hits))
    assert abs(hits.mean() - sv.target_mass) < 4 * se


def test_holds_on_semantics():
    labels = {"g": frozenset({2}), "b": frozenset({3})}
    paths = np.array([[0, 2, 3], [0, 3, 2], [0, 1, 1], [2, 2, 2]])
    np.testing.assert_array_equal(SpecFormula("reach", 0.5, goal="g").holds_on(labels, paths), [1, 1, 0, 1])
    np.testing.assert_array_equal(SpecFormula("safety", 0.5, bad="b").holds_on(labels, paths), [0, 0, 1, 1])
    np.testing.assert_array_equal(
        SpecFormula("until", 0.5, goal="g", bad="b").holds_on(labels, paths), [1, 0, 0, 1]
    )
