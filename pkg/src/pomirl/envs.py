"""Parametric benchmark POMDPs with feature bases, labels, default specs and true weights.

Layouts the benchmark descriptions leave open (player routes, rock positions,
camera rows, obstacle cells) are fixed by a seeded RNG so that the same
``BenchSpec`` always yields the same model.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .model import FeatureBasis, Pomdp, RewardWeights, validate
from .spec import SpecFormula

MOVES = {"north": (-1, 0), "east": (0, 1), "south": (1, 0), "west": (0, -1)}

# Calibrated so that the optimal finite-horizon (T=100) value of Maze is 47.83 and
# the memoryless forward solution scores close to 39.24; see scripts/calibrate_maze.py.
MAZE_THETA_TRUE = (0.16316356, 48.9490683, 3.26327122)

# (time, exit, caught): -1 per step until the exit, +1 per step after it.
EVADE_THETA_TRUE = (1.0, 1.0, 1.0)
# Memoryless forward value of Evade(5, 2, 0.1) at EVADE_THETA_TRUE with default
# solver settings; regenerate with scripts/evade_reference.py.
EVADE_REFERENCE = {"value": 67.6331, "max_iters": 300}


@dataclass(frozen=True)
class BenchSpec:
    family: str
    n: int = 5
    r: int = 2
    slip: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.family not in GENERATORS:
            raise ValueError(f"unknown family {self.family!r}; choose from {sorted(GENERATORS)}")
        if self.n < 2 or self.r < 0:
            raise ValueError("grid size must be at least 2 and radius nonnegative")
        if not 0.0 <= self.slip < 1.0:
            raise ValueError("slip must lie in [0, 1)")


@dataclass(frozen=True, eq=False)
class Bench:
    name: str
    model: Pomdp
    features: FeatureBasis
    spec: SpecFormula
    theta_true: RewardWeights


def _assemble(states, actions, observations, step, observe, initial, discount, labels) -> Pomdp:
    """Build sparse kernels from ``step(s, a) -> {s': p}`` and ``observe(s) -> {z: p}`` over indices."""
    S, A = len(states), len(actions)
    rows, cols, vals = [], [], []
    for s in range(S):
        for a in range(A):
            for t, pr in step(s, a).items():
                if pr > 0:
                    rows.append(s * A + a)
                    cols.append(t)
                    vals.append(pr)
    T = sp.csr_matrix((vals, (rows, cols)), shape=(S * A, S))
    T.sum_duplicates()
    orow, ocol, oval = [], [], []
    for s in range(S):
        for z, pr in observe(s).items():
            orow.append(s)
            ocol.append(z)
            oval.append(pr)
    O = sp.csr_matrix((oval, (orow, ocol)), shape=(S, len(observations)))
    O.sum_duplicates()
    enabled = np.ones((S, A), dtype=bool)
    p = Pomdp(states, actions, observations, T, O, initial, discount, enabled, labels)
    problems = validate(p)
    if problems:
        raise ValueError("generated model is invalid: " + "; ".join(problems[:5]))
    return p


def _features(S, A, columns: dict[str, np.ndarray]) -> FeatureBasis:
    """Stack per-state feature columns (constant over actions)."""
    vals = np.stack([np.broadcast_to(np.asarray(c, float)[:, None], (S, A)) for c in columns.values()], axis=2)
    return FeatureBasis(vals, tuple(columns))


def _grid_move(cell, action, n, blocked=()):
    dr, dc = MOVES[action]
    r, c = cell[0] + dr, cell[1] + dc
    if 0 <= r < n and 0 <= c < n and (r, c) not in blocked:
        return (r, c)
    return cell


# ---------------------------------------------------------------------------
# Maze


MAZE_CELLS = {
    1: (0, 0), 2: (0, 1), 3: (0, 2), 4: (0, 3), 5: (0, 4),
    6: (1, 0), 7: (1, 2), 8: (1, 4),
    9: (2, 0), 10: (2, 2), 11: (2, 4),
    12: (3, 0), 13: (3, 2), 14: (3, 4),
}
MAZE_OBS = {1: 0, 2: 1, 4: 1, 3: 2, 5: 3, 6: 4, 7: 4, 8: 4, 9: 4, 10: 4, 11: 4, 13: 5, 12: 6, 14: 6}


def maze(b: BenchSpec | None = None) -> Bench:
    """The 14-cell maze plus an ``end`` sink.

    s13 (goal) and s14 (bad) end the episode: every action there moves to
    ``end``, which carries no features. s12 is bad but can be left again.
    """
    slip = 0.1 if b is None else b.slip
    ids = sorted(MAZE_CELLS)
    where = {MAZE_CELLS[k]: i for i, k in enumerate(ids)}
    actions = list(MOVES)
    END = len(ids)
    terminal = {ids.index(13), ids.index(14)}

    def step(s, a):
        if s == END or s in terminal:
            return {END: 1.0}
        r, c = MAZE_CELLS[ids[s]]
        dr, dc = MOVES[actions[a]]
        t = where.get((r + dr, c + dc), s)
        return {s: slip, t: 1.0 - slip} if t != s else {s: 1.0}

    mu0 = np.array([1.0 if k <= 11 else 0.0 for k in ids] + [0.0])
    p = _assemble(
        [f"s{k}" for k in ids] + ["end"], actions, [f"o{i}" for i in range(1, 8)] + ["end"], step,
        lambda s: {7 if s == END else MAZE_OBS[ids[s]]: 1.0}, mu0 / mu0.sum(), 0.999,
        {"goal": {ids.index(13)}, "bad": {ids.index(12), ids.index(14)}},
    )
    S = p.n_states
    time = -np.ones(S)
    time[END] = 0.0
    target = np.zeros(S)
    target[ids.index(13)] = 1.0
    bad = np.zeros(S)
    bad[[ids.index(12), ids.index(14)]] = -1.0
    phi = _features(S, 4, {"time": time, "target": target, "bad": bad})
    return Bench("maze", p, phi, SpecFormula("safety", 0.9, bad="bad"), RewardWeights(MAZE_THETA_TRUE))


# ---------------------------------------------------------------------------
# Obstacle


def obstacle(b: BenchSpec) -> Bench:
    """n x n grid with five static obstacles; the agent enters at a start cell and must reach the exit.

    States are the grid cells plus an entry state and a terminal ``done`` sink.
    Obstacles and the exit both lead to ``done``.
    """
    n, rng = b.n, np.random.default_rng(b.seed)
    start, exit_ = (0, 0), (n - 1, n - 1)
    free = [c for c in itertools.product(range(n), range(n)) if c not in (start, exit_)]
    k = min(5, len(free))
    obstacles = {free[i] for i in rng.choice(len(free), size=k, replace=False)}
    cells = list(itertools.product(range(n), range(n)))
    idx = {c: i for i, c in enumerate(cells)}
    INIT, DONE = len(cells), len(cells) + 1
    actions = list(MOVES)

    def step(s, a):
        if s == INIT:
            return {idx[start]: 1.0}
        if s == DONE or cells[s] == exit_ or cells[s] in obstacles:
            return {DONE: 1.0}
        t = idx[_grid_move(cells[s], actions[a], n)]
        return {s: b.slip, t: 1.0 - b.slip} if t != s else {s: 1.0}

    def observe(s):
        if s == INIT:
            return {0: 1.0}
        if s == DONE:
            return {4: 1.0}
        if cells[s] in obstacles:
            return {2: 1.0}
        return {3: 1.0} if cells[s] == exit_ else {1: 1.0}

    mu0 = np.zeros(len(cells) + 2)
    mu0[INIT] = 1.0
    names = [f"c{r}_{c}" for r, c in cells] + ["init", "done"]
    p = _assemble(
        names, actions, ["init", "normal", "obstacle", "exit", "done"], step, observe, mu0, 0.999,
        {"obstacle": {idx[c] for c in obstacles}, "exit": {idx[exit_]}},
    )
    S = p.n_states
    ex = np.zeros(S)
    ex[idx[exit_]] = 1.0
    ob = np.zeros(S)
    ob[[idx[c] for c in obstacles]] = -1.0
    phi = _features(S, 4, {"time": -np.where(np.arange(S) == DONE, 0.0, 1.0), "exit": ex, "obstacle": ob})
    spec = SpecFormula("until", 0.9, goal="exit", bad="obstacle")
    return Bench(f"obstacle[{n}]", p, phi, spec, RewardWeights((1.0, 20.0, 20.0)))


# ---------------------------------------------------------------------------
# pursuit-style games sharing an (agent, player) grid


def _dist(a, b):
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def evade(b: BenchSpec) -> Bench:
    """The agent crosses the grid to the far corner while a faster player chases it.

    The player is seen only within Manhattan radius ``r`` or right after a
    ``scan``. Each turn the player picks a random direction and moves one or,
    with probability 1/2, two cells along it; the agent is caught when both end
    a turn on one cell.
    """
    n, r, slip = b.n, b.r, b.slip
    cells = list(itertools.product(range(n), range(n)))
    goal_cell, start = (n - 1, n - 1), (0, 0)
    pstarts = [c for c in cells if c[0] >= n // 2 and c != goal_cell and _dist(c, start) > r + 1]
    states = [(ag, pl, f) for ag in cells for pl in cells for f in (0, 1) if ag != pl and ag != goal_cell]
    idx = {s: i for i, s in enumerate(states)}
    GOAL, CAUGHT = len(states), len(states) + 1
    actions = list(MOVES) + ["scan"]
    cidx = {c: i for i, c in enumerate(cells)}
    Z_NONE = len(cells)

    def player_dist(pl):
        out: dict = {}
        for m in MOVES:
            m1 = _grid_move(pl, m, n)
            m2 = _grid_move(m1, m, n)
            out[m1] = out.get(m1, 0.0) + 0.5 / len(MOVES)
            out[m2] = out.get(m2, 0.0) + 0.5 / len(MOVES)
        return out

    def step(s, a):
        if s >= GOAL:
            return {s: 1.0}
        ag, pl, _ = states[s]
        if actions[a] == "scan":
            moves = {ag: 1.0}
        else:
            t = _grid_move(ag, actions[a], n)
            moves = {ag: slip, t: 1.0 - slip} if t != ag else {ag: 1.0}
        out: dict = {}
        flag = 1 if actions[a] == "scan" else 0
        for ag2, p1 in moves.items():
            if ag2 == goal_cell:
                out[GOAL] = out.get(GOAL, 0.0) + p1
                continue
            if ag2 == pl:
                out[CAUGHT] = out.get(CAUGHT, 0.0) + p1
                continue
            for pl2, p2 in player_dist(pl).items():
                key = CAUGHT if pl2 == ag2 else idx[(ag2, pl2, flag)]
                out[key] = out.get(key, 0.0) + p1 * p2
        return out

    n_obs = len(cells) * (len(cells) + 1)

    def observe(s):
        if s == GOAL:
            return {n_obs: 1.0}
        if s == CAUGHT:
            return {n_obs + 1: 1.0}
        ag, pl, f = states[s]
        seen = f or _dist(ag, pl) <= r
        return {cidx[ag] * (len(cells) + 1) + (cidx[pl] if seen else Z_NONE): 1.0}

    mu0 = np.zeros(len(states) + 2)
    for pl in pstarts:
        mu0[idx[(start, pl, 0)]] = 1.0
    mu0 /= mu0.sum()
    obs_names = [f"a{cidx[ag]}p{('-' if j == Z_NONE else j)}" for ag in cells for j in range(len(cells) + 1)]
    p = _assemble(
        [f"a{cidx[ag]}p{cidx[pl]}f{f}" for ag, pl, f in states] + ["goal", "caught"], actions,
        obs_names + ["goal", "caught"], step, observe, mu0, 0.999,
        {"exit": {GOAL}, "caught": {CAUGHT}},
    )
    S = p.n_states
    phi = _features(S, len(actions), {
        "time": -np.where(np.arange(S) >= GOAL, 0.0, 1.0),
        "exit": (np.arange(S) == GOAL).astype(float),
        "caught": -(np.arange(S) == CAUGHT).astype(float),
    })
    spec = SpecFormula("reach", 0.98, goal="exit")
    return Bench(f"evade[{n},{r},{slip}]", p, phi, spec, RewardWeights(EVADE_THETA_TRUE))


def intercept(b: BenchSpec) -> Bench:
    """The agent must reach the player's cell before the player exits on the east edge.

    The player drifts east (north/south with small probability). It is visible
    within radius ``r`` or whenever it stands on the camera row.
    """
    n, r, slip = b.n, b.r, b.slip
    rng = np.random.default_rng(b.seed)
    camera_row = int(rng.integers(n))
    cells = list(itertools.product(range(n), range(n)))
    states = [(ag, pl) for ag in cells for pl in cells if ag != pl]
    idx = {s: i for i, s in enumerate(states)}
    CAUGHT, ESCAPED = len(states), len(states) + 1
    actions = list(MOVES)
    cidx = {c: i for i, c in enumerate(cells)}
    NONE = len(cells)

    def player_moves(pl):
        if pl[1] == n - 1:
            return {None: 1.0}
        out = {(pl[0], pl[1] + 1): 0.8}
        for dr in (-1, 1):
            t = (min(max(pl[0] + dr, 0), n - 1), pl[1])
            out[t] = out.get(t, 0.0) + 0.1
        return out

    def step(s, a):
        if s >= CAUGHT:
            return {s: 1.0}
        ag, pl = states[s]
        t = _grid_move(ag, actions[a], n)
        out: dict = {}
        for ag2, p1 in ({ag: slip, t: 1.0 - slip} if t != ag else {ag: 1.0}).items():
            if ag2 == pl:
                out[CAUGHT] = out.get(CAUGHT, 0.0) + p1
                continue
            for pl2, p2 in player_moves(pl).items():
                key = ESCAPED if pl2 is None else (CAUGHT if pl2 == ag2 else idx[(ag2, pl2)])
                out[key] = out.get(key, 0.0) + p1 * p2
        return out

    n_obs = len(cells) * (len(cells) + 1)

    def observe(s):
        if s >= CAUGHT:
            return {n_obs + s - CAUGHT: 1.0}
        ag, pl = states[s]
        seen = _dist(ag, pl) <= r or pl[0] == camera_row
        return {cidx[ag] * (len(cells) + 1) + (cidx[pl] if seen else NONE): 1.0}

    mu0 = np.zeros(len(states) + 2)
    for row in range(n):
        ag = (n // 2, n - 1)
        if (row, 0) != ag:
            mu0[idx[(ag, (row, 0))]] = 1.0
    mu0 /= mu0.sum()
    p = _assemble(
        [f"a{cidx[ag]}p{cidx[pl]}" for ag, pl in states] + ["caught", "escaped"], actions,
        [f"a{i}p{'-' if j == NONE else j}" for i in range(len(cells)) for j in range(len(cells) + 1)]
        + ["caught", "escaped"], step, observe, mu0, 0.999,
        {"intercept": {CAUGHT}, "escaped": {ESCAPED}},
    )
    S = p.n_states
    phi = _features(S, len(actions), {
        "time": -np.where(np.arange(S) >= CAUGHT, 0.0, 1.0),
        "intercept": (np.arange(S) == CAUGHT).astype(float),
        "escaped": -(np.arange(S) == ESCAPED).astype(float),
    })
    return Bench(
        f"intercept[{n},{r},{slip}]", p, phi, SpecFormula("reach", 0.9, goal="intercept"), RewardWeights((1.0, 1.0, 1.0))
    )


def _route(n, rng):
    """A rectangular patrol loop inside the grid."""
    r0, c0 = int(rng.integers(0, n - 2)), int(rng.integers(0, n - 2))
    r1, c1 = int(rng.integers(r0 + 1, n)), int(rng.integers(c0 + 1, n))
    loop = [(r0, c) for c in range(c0, c1)] + [(r, c1) for r in range(r0, r1)]
    loop += [(r1, c) for c in range(c1, c0, -1)] + [(r, c0) for r in range(r1, r0, -1)]
    return loop


def avoid(b: BenchSpec) -> Bench:
    """Reach the exit without coming within radius ``r`` of two patrolling players.

    Each player follows a fixed loop and advances one or two positions per turn
    with equal probability, so its phase cannot be tracked. The agent only sees
    whether some player is within ``r + 1``.
    """
    n, r, slip = b.n, b.r, b.slip
    rng = np.random.default_rng(b.seed)
    start, exit_ = (0, 0), (n - 1, n - 1)
    for _ in range(1000):
        routes = [_route(n, rng), _route(n, rng)]
        cells_on = {c for rt in routes for c in rt}
        starts_clear = any(
            _dist(start, p1) > r and _dist(start, p2) > r for p1 in routes[0] for p2 in routes[1]
        )
        if start not in cells_on and exit_ not in cells_on and starts_clear:
            break
    else:
        raise ValueError(f"no valid patrol layout for n={n}, r={r}")
    cells = list(itertools.product(range(n), range(n)))
    cidx = {c: i for i, c in enumerate(cells)}
    states = [(ag, i, j) for ag in cells if ag != exit_ for i in range(len(routes[0])) for j in range(len(routes[1]))]
    idx = {s: k for k, s in enumerate(states)}
    EXIT, DETECTED = len(states), len(states) + 1
    actions = list(MOVES)

    def detected(ag, i, j):
        return _dist(ag, routes[0][i]) <= r or _dist(ag, routes[1][j]) <= r

    def step(s, a):
        if s >= EXIT:
            return {s: 1.0}
        ag, i, j = states[s]
        t = _grid_move(ag, actions[a], n)
        out: dict = {}
        for ag2, p1 in ({ag: slip, t: 1.0 - slip} if t != ag else {ag: 1.0}).items():
            if ag2 == exit_:
                out[EXIT] = out.get(EXIT, 0.0) + p1
                continue
            for di, dj in itertools.product((1, 2), (1, 2)):
                i2, j2 = (i + di) % len(routes[0]), (j + dj) % len(routes[1])
                key = DETECTED if detected(ag2, i2, j2) else idx[(ag2, i2, j2)]
                out[key] = out.get(key, 0.0) + p1 * 0.25
        return out

    def observe(s):
        if s >= EXIT:
            return {2 * len(cells) + s - EXIT: 1.0}
        ag, i, j = states[s]
        near = _dist(ag, routes[0][i]) <= r + 1 or _dist(ag, routes[1][j]) <= r + 1
        return {2 * cidx[ag] + int(near): 1.0}

    mu0 = np.zeros(len(states) + 2)
    for i in range(len(routes[0])):
        for j in range(len(routes[1])):
            if not detected(start, i, j):
                mu0[idx[(start, i, j)]] = 1.0
    mu0 /= mu0.sum()
    near = np.zeros(len(states) + 2)
    for k, (ag, i, j) in enumerate(states):
        near[k] = float(_dist(ag, routes[0][i]) <= r + 1 or _dist(ag, routes[1][j]) <= r + 1)
    p = _assemble(
        [f"a{cidx[ag]}r{i}_{j}" for ag, i, j in states] + ["exit", "detected"], actions,
        [f"a{k}{'near' if m else 'clear'}" for k in range(len(cells)) for m in (0, 1)] + ["exit", "detected"],
        step, observe, mu0, 0.999, {"exit": {EXIT}, "detected": {DETECTED}},
    )
    S = p.n_states
    phi = _features(S, len(actions), {
        "time": -np.where(np.arange(S) >= EXIT, 0.0, 1.0),
        "exit": (np.arange(S) == EXIT).astype(float),
        "detected": -(np.arange(S) == DETECTED).astype(float),
        "near": -near,
    })
    spec = SpecFormula("until", 0.9, goal="exit", bad="detected")
    return Bench(f"avoid[{n},{r},{slip}]", p, phi, spec, RewardWeights((1.0, 1.0, 1.0, 0.5)))


def rocks(b: BenchSpec) -> Bench:
    """Sample at least one good rock without ever sampling a bad one.

    Two rocks of hidden quality sit at seeded cells; standing on a rock gives a
    reading that is correct with probability 0.8.
    """
    n, slip = b.n, b.slip
    rng = np.random.default_rng(b.seed)
    cells = list(itertools.product(range(n), range(n)))
    free = cells[1:]
    rocks_at = [free[i] for i in rng.choice(len(free), size=2, replace=False)]
    qualities = list(itertools.product((0, 1), repeat=2))
    states = [(c, q) for c in cells for q in qualities]
    idx = {s: k for k, s in enumerate(states)}
    SUCCESS, FAILURE = len(states), len(states) + 1
    actions = list(MOVES) + ["sample"]
    cidx = {c: i for i, c in enumerate(cells)}

    def step(s, a):
        if s >= SUCCESS:
            return {s: 1.0}
        c, q = states[s]
        if actions[a] == "sample":
            if c in rocks_at:
                return {SUCCESS if q[rocks_at.index(c)] else FAILURE: 1.0}
            return {s: 1.0}
        t = _grid_move(c, actions[a], n)
        return {s: slip, idx[(t, q)]: 1.0 - slip} if t != c else {s: 1.0}

    def observe(s):
        if s >= SUCCESS:
            return {3 * len(cells) + s - SUCCESS: 1.0}
        c, q = states[s]
        base = 3 * cidx[c]
        if c not in rocks_at:
            return {base: 1.0}
        good = q[rocks_at.index(c)]
        return {base + 1: 0.8 if good else 0.2, base + 2: 0.2 if good else 0.8}

    mu0 = np.zeros(len(states) + 2)
    for q in qualities:
        mu0[idx[((0, 0), q)]] = 0.25
    p = _assemble(
        [f"c{cidx[c]}q{q[0]}{q[1]}" for c, q in states] + ["success", "failure"], actions,
        [f"c{k}{m}" for k in range(len(cells)) for m in ("", "+", "-")] + ["success", "failure"],
        step, observe, mu0, 0.999, {"success": {SUCCESS}, "failure": {FAILURE}},
    )
    S = p.n_states
    phi = _features(S, len(actions), {
        "time": -np.where(np.arange(S) >= SUCCESS, 0.0, 1.0),
        "success": (np.arange(S) == SUCCESS).astype(float),
        "failure": -(np.arange(S) == FAILURE).astype(float),
    })
    spec = SpecFormula("until", 0.9, goal="success", bad="failure")
    return Bench(f"rocks[{n}]", p, phi, spec, RewardWeights((1.0, 1.0, 1.0)))


GENERATORS = {
    "maze": maze, "obstacle": obstacle, "evade": evade, "intercept": intercept, "avoid": avoid, "rocks": rocks,
}


def generate(b: BenchSpec) -> Bench:
    return GENERATORS[b.family](b)
