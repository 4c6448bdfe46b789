"""Backend-neutral LP construction and solving.

Variables are declared in named blocks (arrays of any shape) and constraints in
named blocks of sparse rows, which keeps problem assembly vectorized. The default
backend is HiGHS through :func:`scipy.optimize.linprog`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import highspy
import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

FEAS_TOL = 1e-6

log = logging.getLogger(__name__)


class LpError(RuntimeError):
    pass


@dataclass
class _RowBlock:
    name: str
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    sense: str
    rhs: np.ndarray


@dataclass
class LpProblem:
    """A maximization LP ``max c.x  s.t.  rows (==, <=, >=) rhs,  lo <= x <= hi``."""

    blocks: dict[str, tuple[slice, tuple[int, ...]]] = field(default_factory=dict)
    lower: list[np.ndarray] = field(default_factory=list)
    upper: list[np.ndarray] = field(default_factory=list)
    objective: list[np.ndarray] = field(default_factory=list)
    row_blocks: list[_RowBlock] = field(default_factory=list)
    n_vars: int = 0
    n_rows: int = 0

    def add_variables(self, name: str, shape, lower=0.0, upper=np.inf, objective=0.0) -> np.ndarray:
        """Declare a block of variables; returns their column indices with the block's shape."""
        if name in self.blocks:
            raise ValueError(f"duplicate variable block {name!r}")
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = math.prod(shape)
        lo = np.broadcast_to(np.asarray(lower, dtype=float), shape).ravel().copy()
        hi = np.broadcast_to(np.asarray(upper, dtype=float), shape).ravel().copy()
        if (lo > hi).any():
            raise ValueError(f"block {name!r} has lower bounds above upper bounds")
        c = np.broadcast_to(np.asarray(objective, dtype=float), shape).ravel().copy()
        if not np.isfinite(c).all():
            raise ValueError(f"block {name!r} has non-finite objective coefficients")
        self.blocks[name] = (slice(self.n_vars, self.n_vars + n), shape)
        self.lower.append(lo)
        self.upper.append(hi)
        self.objective.append(c)
        idx = np.arange(self.n_vars, self.n_vars + n).reshape(shape)
        self.n_vars += n
        return idx

    def add_constraints(self, name: str, rows, cols, vals, sense: str, rhs) -> None:
        """Add a block of rows given as COO triplets with row ids local to the block."""
        if sense not in ("==", "<=", ">="):
            raise ValueError(f"bad sense {sense!r}")
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=float).ravel()
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float)).ravel()
        if not (rows.shape == cols.shape == vals.shape):
            raise ValueError("row, column and value arrays must align")
        if len(cols) and (cols.min() < 0 or cols.max() >= self.n_vars):
            raise ValueError(f"constraint block {name!r} references undeclared variables")
        if len(rows) and (rows.min() < 0 or rows.max() >= len(rhs)):
            raise ValueError(f"constraint block {name!r} has row ids outside its rhs")
        if not (np.isfinite(vals).all() and np.isfinite(rhs).all()):
            raise ValueError(f"constraint block {name!r} has non-finite coefficients")
        self.row_blocks.append(_RowBlock(name, rows, cols, vals, sense, rhs))
        self.n_rows += len(rhs)

    def variable_names(self) -> list[str]:
        names = []
        for name, (_, shape) in self.blocks.items():
            names.extend(f"{name}" + "".join(f"[{i}]" for i in ix) for ix in np.ndindex(*shape))
        return names

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.concatenate(self.lower), np.concatenate(self.upper)

    def cost(self) -> np.ndarray:
        return np.concatenate(self.objective)

    def matrix(self, senses: tuple[str, ...]) -> tuple[sp.csr_matrix, np.ndarray, list[str]]:
        """Stack the row blocks with the given senses into one sparse matrix."""
        r, c, v, b, kinds = [], [], [], [], []
        offset = 0
        for blk in self.row_blocks:
            if blk.sense not in senses:
                continue
            r.append(blk.rows + offset)
            c.append(blk.cols)
            v.append(blk.vals)
            b.append(blk.rhs)
            kinds.extend([blk.sense] * len(blk.rhs))
            offset += len(blk.rhs)
        if not r:
            return sp.csr_matrix((0, self.n_vars)), np.zeros(0), []
        M = sp.csr_matrix(
            (np.concatenate(v), (np.concatenate(r), np.concatenate(c))), shape=(offset, self.n_vars)
        )
        return M, np.concatenate(b), kinds

    def evaluate(self, x: np.ndarray) -> tuple[float, float]:
        """Objective value and the largest (rhs-scaled) constraint or bound violation at ``x``."""
        worst = 0.0
        for blk in self.row_blocks:
            lhs = np.zeros(len(blk.rhs))
            np.add.at(lhs, blk.rows, blk.vals * x[blk.cols])
            scale = np.maximum(1.0, np.abs(blk.rhs))
            if blk.sense == "==":
                viol = np.abs(lhs - blk.rhs)
            elif blk.sense == "<=":
                viol = lhs - blk.rhs
            else:
                viol = blk.rhs - lhs
            if len(viol):
                worst = max(worst, float((viol / scale).max()))
        lo, hi = self.bounds()
        if len(x):
            worst = max(worst, float(np.max(lo - x, initial=0.0)), float(np.max(x - hi, initial=0.0)))
        return float(self.cost() @ x), worst

    def to_lp_format(self) -> str:
        """Render in CPLEX LP text format (for debugging)."""
        names = [n.replace("[", "(").replace("]", ")").replace(",", "_") for n in self.variable_names()]
        c = self.cost()

        def expr(idx, coef):
            parts = [f"{'+' if v >= 0 else '-'} {abs(v):.17g} {names[i]}" for i, v in zip(idx, coef) if v != 0]
            return " ".join(parts) if parts else "0 " + names[0]

        out = ["\\ generated by pomirl", "Maximize", " obj: " + expr(np.flatnonzero(c), c[c != 0]), "Subject To"]
        sym = {"==": "=", "<=": "<=", ">=": ">="}
        for blk in self.row_blocks:
            M = sp.csr_matrix((blk.vals, (blk.rows, blk.cols)), shape=(len(blk.rhs), self.n_vars))
            for i in range(len(blk.rhs)):
                lo_, hi_ = M.indptr[i], M.indptr[i + 1]
                out.append(
                    f" {blk.name}_{i}: {expr(M.indices[lo_:hi_], M.data[lo_:hi_])} {sym[blk.sense]} {blk.rhs[i]:.17g}"
                )
        out.append("Bounds")
        lo, hi = self.bounds()
        for n, l, h in zip(names, lo, hi):
            l_ = "-inf" if np.isneginf(l) else f"{l:.17g}"
            h_ = "+inf" if np.isposinf(h) else f"{h:.17g}"
            out.append(f" {l_} <= {n} <= {h_}")
        out.append("End")
        return "\n".join(out) + "\n"


@dataclass
class LpSolution:
    status: str  # optimal | infeasible | unbounded | numeric-failure
    values: dict[str, np.ndarray]
    objective_value: float
    x: np.ndarray | None = None
    max_violation: float = math.nan
    message: str = ""


def _highs(lp: LpProblem, method: str = "highs") -> tuple[str, np.ndarray | None, str]:
    A_eq, b_eq, _ = lp.matrix(("==",))
    A_le, b_le, _ = lp.matrix(("<=",))
    A_ge, b_ge, _ = lp.matrix((">=",))
    A_ub = sp.vstack([A_le, -A_ge], format="csr") if A_ge.shape[0] else A_le
    b_ub = np.concatenate([b_le, -b_ge])
    lo, hi = lp.bounds()
    res = linprog(
        -lp.cost(),
        A_ub=A_ub if A_ub.shape[0] else None,
        b_ub=b_ub if A_ub.shape[0] else None,
        A_eq=A_eq if A_eq.shape[0] else None,
        b_eq=b_eq if A_eq.shape[0] else None,
        bounds=np.column_stack([np.where(np.isneginf(lo), None, lo), np.where(np.isposinf(hi), None, hi)]),
        method=method,
    )
    status = {0: "optimal", 2: "infeasible", 3: "unbounded"}.get(res.status, "numeric-failure")
    if status == "numeric-failure" and method == "highs":
        # the automatic choice (dual simplex) occasionally stalls on badly scaled
        # steps; the interior-point path usually gets through
        log.debug("highs: %s; retrying with highs-ipm", res.message)
        return _highs(lp, "highs-ipm")
    return status, (res.x if res.x is not None else None), f"highs status {res.status}: {res.message}"


class WarmStart:
    """Simplex basis carried between consecutive LPs of the same shape.

    Successive trust-region LPs differ only in coefficients, so the previous
    optimal basis is usually a few hundred pivots from the next optimum.
    """

    def __init__(self):
        self.basis = None
        self.shape: tuple[int, int] | None = None


_MODEL_STATUS = {
    highspy.HighsModelStatus.kOptimal: "optimal",
    highspy.HighsModelStatus.kInfeasible: "infeasible",
    highspy.HighsModelStatus.kUnbounded: "unbounded",
    highspy.HighsModelStatus.kUnboundedOrInfeasible: "unbounded",
}


def _highs_model(lp: LpProblem) -> highspy.Highs:
    A, rhs, kinds = lp.matrix(("==", "<=", ">="))
    kinds = np.asarray(kinds)
    inf = highspy.kHighsInf
    lo, hi = lp.bounds()
    model = highspy.HighsLp()
    model.num_col_, model.num_row_ = lp.n_vars, A.shape[0]
    model.col_cost_ = -lp.cost()
    model.col_lower_ = np.where(np.isneginf(lo), -inf, lo)
    model.col_upper_ = np.where(np.isposinf(hi), inf, hi)
    model.row_lower_ = np.where(kinds == "<=", -inf, rhs) if len(rhs) else rhs
    model.row_upper_ = np.where(kinds == ">=", inf, rhs) if len(rhs) else rhs
    A = sp.csc_matrix(A)
    model.a_matrix_.format_ = highspy.MatrixFormat.kColwise
    model.a_matrix_.start_ = A.indptr
    model.a_matrix_.index_ = A.indices
    model.a_matrix_.value_ = A.data
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.passModel(model)
    return h


def _highs_warm(lp: LpProblem, warm: WarmStart | None = None) -> tuple[str, np.ndarray | None, str]:
    shape = (lp.n_vars, lp.n_rows)
    h = _highs_model(lp)
    started = warm is not None and warm.basis is not None and warm.shape == shape
    if started:
        h.setBasis(warm.basis)
    h.run()
    status = _MODEL_STATUS.get(h.getModelStatus(), "numeric-failure")
    if status == "numeric-failure" and started:
        warm.basis = None
        return _highs_warm(lp, warm)
    if status == "numeric-failure":
        log.debug("highs-warm: %s; retrying with highs-ipm", h.modelStatusToString(h.getModelStatus()))
        return _highs(lp, "highs-ipm")
    if status != "optimal":
        return status, None, f"highs {h.modelStatusToString(h.getModelStatus())}"
    if warm is not None:
        warm.basis, warm.shape = h.getBasis(), shape
    x = np.asarray(h.getSolution().col_value, dtype=float)
    return status, x, f"highs optimal after {h.getInfo().simplex_iteration_count} pivots"


_highs_warm.accepts_warm = True

# "highs-ipm" (interior point with crossover) is faster on the larger product LPs;
# "highs-warm" reuses the previous basis and is the fastest inside the SCP loop
BACKENDS: dict[str, Callable[..., tuple[str, np.ndarray | None, str]]] = {
    "highs": _highs,
    "highs-ipm": lambda lp: _highs(lp, "highs-ipm"),
    "highs-ds": lambda lp: _highs(lp, "highs-ds"),
    "highs-warm": _highs_warm,
}


def solve_lp(
    lp: LpProblem, backend: str = "highs", tol: float = FEAS_TOL, warm: WarmStart | None = None
) -> LpSolution:
    """Solve ``lp`` and certify the returned point.

    An optimal status is only reported when re-evaluating every constraint at the
    returned point shows violations within ``tol`` (relative to max(1, |rhs|)).
    ``warm`` is handed to backends that can reuse a basis and ignored otherwise.
    """
    if backend not in BACKENDS:
        raise ValueError(f"unknown LP backend {backend!r}; choose from {sorted(BACKENDS)}")
    fn = BACKENDS[backend]
    status, x, message = fn(lp, warm) if getattr(fn, "accepts_warm", False) else fn(lp)
    if status != "optimal" or x is None:
        return LpSolution(status, {}, math.nan, None, math.nan, message)
    lo, hi = lp.bounds()
    x = np.clip(x, lo, hi)
    obj, viol = lp.evaluate(x)
    if viol > tol:
        return LpSolution("numeric-failure", {}, obj, x, viol, f"{message}; certified violation {viol:.3g}")
    values = {name: x[slc].reshape(shape) for name, (slc, shape) in lp.blocks.items()}
    return LpSolution("optimal", values, obj, x, viol, message)
