import numpy as np
import pytest
import scipy.sparse as sp

from pomirl.envs import maze
from pomirl.model import FeatureBasis, Pomdp


def random_pomdp(rng, S=4, A=2, Z=2, discount=0.9, density=0.6, absorbing=()):
    """Random model where every state sees every action; optional absorbing states."""
    rows, cols, vals = [], [], []
    for s in range(S):
        for a in range(A):
            if s in absorbing:
                rows.append(s * A + a)
                cols.append(s)
                vals.append(1.0)
                continue
            mask = rng.random(S) < density
            mask[rng.integers(S)] = True
            w = rng.random(S) * mask
            w /= w.sum()
            for t in np.flatnonzero(w):
                rows.append(s * A + a)
                cols.append(t)
                vals.append(w[t])
    T = sp.csr_matrix((vals, (rows, cols)), shape=(S * A, S))
    O = rng.random((S, Z)) + 0.05
    O /= O.sum(axis=1, keepdims=True)
    mu0 = rng.random(S) + 0.1
    mu0 /= mu0.sum()
    return Pomdp(
        [f"s{i}" for i in range(S)], [f"a{i}" for i in range(A)], [f"z{i}" for i in range(Z)],
        T, sp.csr_matrix(O), mu0, discount, np.ones((S, A), bool),
    )


def random_features(rng, p, d=2):
    return FeatureBasis(rng.normal(size=(p.n_states, p.n_actions, d)))


def random_policy_matrix(rng, Z, A):
    s = rng.random((Z, A)) + 0.05
    return s / s.sum(axis=1, keepdims=True)


@pytest.fixture(scope="session")
def maze_bench():
    return maze()


# criterion number -> [(passed, detail)], filled by test_acceptance
ACCEPTANCE: dict[int, list] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        for ok, detail in ACCEPTANCE[number]:
            terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}")
