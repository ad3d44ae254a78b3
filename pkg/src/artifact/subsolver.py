"""Single-level solver: LP, mixed-binary LP and convex-quadratic outer approximation.

Programs are maximisation problems over variables with finite bounds. The LP
engine is a bounded dual simplex (see ``_lpengine``); branch-and-bound uses
most-fractional branching with best-bound node selection, and convex quadratic
constraints enter through accumulated gradient cuts.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

from ._lpengine import INFEASIBLE, ITER_LIMIT, OPTIMAL, LPEngine

CONTINUOUS = "continuous"
BINARY = "binary"
RELATIONS = ("<=", "=", ">=")
BIG = 1e9


class Status(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ITER_LIMIT = "IterLimit"


@dataclass
class Variable:
    name: str
    kind: str
    lower: float
    upper: float


@dataclass
class LinearConstraint:
    coeffs: dict
    relation: str
    rhs: float
    name: str = ""


@dataclass
class QuadConstraint:
    """sum_{(i,j)} q_ij x_i x_j + a.x <= rhs, keys with i <= j."""

    quad: dict
    linear: dict
    rhs: float
    name: str = ""

    def value(self, x) -> float:
        v = sum(c * x[i] * x[j] for (i, j), c in self.quad.items())
        v += sum(c * x[i] for i, c in self.linear.items())
        return v - self.rhs

    def gradient(self, x) -> dict:
        g = dict(self.linear)
        for (i, j), c in self.quad.items():
            g[i] = g.get(i, 0.0) + c * x[j]
            g[j] = g.get(j, 0.0) + c * x[i]
        return g

    def cut(self, x):
        """Gradient cut g(x0) + grad.(x - x0) <= 0 as (coeffs, rhs)."""
        g = self.gradient(x)
        qval = sum(c * x[i] * x[j] for (i, j), c in self.quad.items())
        scale = max((abs(v) for v in g.values()), default=0.0)
        if scale <= 0.0:
            return g, self.rhs + qval
        # unit-norm rows keep the simplex tolerances meaningful far from the origin
        return {k: v / scale for k, v in g.items()}, (self.rhs + qval) / scale

    def matrix(self):
        """Symmetric matrix on the touched variables (sorted), for PSD checks."""
        idx = sorted({k for key in self.quad for k in key})
        pos = {v: t for t, v in enumerate(idx)}
        M = np.zeros((len(idx), len(idx)))
        for (i, j), c in self.quad.items():
            if i == j:
                M[pos[i], pos[i]] += c
            else:
                M[pos[i], pos[j]] += c / 2
                M[pos[j], pos[i]] += c / 2
        return idx, M


@dataclass
class SolveOutcome:
    status: Status
    objective: float = float("nan")
    point: np.ndarray | None = None
    duals: np.ndarray | None = None
    nodes: int = 0
    cuts: int = 0
    pivots: int = 0


@dataclass
class SolverOptions:
    feas_tol: float = 1e-6
    int_tol: float = 1e-9
    max_pivots: int = 1_000_000
    bland_after: int = 1000
    cut_cap: int = 500
    oa_tol: float = 1e-7
    node_limit: int = 1_000_000
    kernel: str | None = None


class MixedProgram:
    """Solver-neutral program: bounded variables, linear rows, convex quadratic rows, max c.x."""

    def __init__(self, name: str = "program"):
        self.name = name
        self.variables: list[Variable] = []
        self.constraints: list[LinearConstraint] = []
        self.quad_constraints: list[QuadConstraint] = []
        self.objective: dict = {}
        self._index: dict = {}

    # -- building ---------------------------------------------------------
    def add_var(self, name: str, lower: float, upper: float, kind: str = CONTINUOUS) -> int:
        if name in self._index:
            raise ValueError(f"duplicate variable {name}")
        if kind not in (CONTINUOUS, BINARY):
            raise ValueError(f"bad kind {kind}")
        if kind == BINARY:
            lower, upper = max(0.0, lower), min(1.0, upper)
        self.variables.append(Variable(name, kind, float(lower), float(upper)))
        self._index[name] = len(self.variables) - 1
        return len(self.variables) - 1

    def var(self, name: str) -> int:
        return self._index[name]

    def has_var(self, name: str) -> bool:
        return name in self._index

    def add_constraint(self, coeffs: dict, relation: str, rhs: float, name: str = "") -> int:
        if relation not in RELATIONS:
            raise ValueError(f"bad relation {relation}")
        clean = {int(k): float(v) for k, v in coeffs.items() if v != 0.0}
        self.constraints.append(LinearConstraint(clean, relation, float(rhs), name))
        return len(self.constraints) - 1

    def add_quad(self, quad: dict, linear: dict, rhs: float, name: str = "") -> int:
        q = {}
        for (i, j), c in quad.items():
            key = (min(i, j), max(i, j))
            q[key] = q.get(key, 0.0) + float(c)
        lin = {int(k): float(v) for k, v in linear.items() if v != 0.0}
        self.quad_constraints.append(QuadConstraint(q, lin, float(rhs), name))
        return len(self.quad_constraints) - 1

    def set_objective(self, coeffs: dict):
        self.objective = {int(k): float(v) for k, v in coeffs.items() if v != 0.0}

    def set_bounds(self, j: int, lower: float, upper: float):
        v = self.variables[j]
        v.lower, v.upper = float(lower), float(upper)

    def copy(self) -> "MixedProgram":
        other = MixedProgram(self.name)
        other.variables = [Variable(v.name, v.kind, v.lower, v.upper) for v in self.variables]
        other.constraints = [LinearConstraint(dict(c.coeffs), c.relation, c.rhs, c.name)
                             for c in self.constraints]
        other.quad_constraints = [QuadConstraint(dict(c.quad), dict(c.linear), c.rhs, c.name)
                                  for c in self.quad_constraints]
        other.objective = dict(self.objective)
        other._index = dict(self._index)
        return other

    # -- queries ----------------------------------------------------------
    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def binaries(self) -> list[int]:
        return [j for j, v in enumerate(self.variables) if v.kind == BINARY]

    def objective_value(self, x) -> float:
        return float(sum(c * x[j] for j, c in self.objective.items()))

    def max_violation(self, x) -> float:
        """Largest violation over bounds, linear rows and quadratic rows."""
        worst = 0.0
        for j, v in enumerate(self.variables):
            worst = max(worst, v.lower - x[j], x[j] - v.upper)
        for c in self.constraints:
            act = sum(a * x[j] for j, a in c.coeffs.items())
            if c.relation == "<=":
                worst = max(worst, act - c.rhs)
            elif c.relation == ">=":
                worst = max(worst, c.rhs - act)
            else:
                worst = max(worst, abs(act - c.rhs))
        for qc in self.quad_constraints:
            worst = max(worst, qc.value(x))
        return worst

    def non_psd(self, tol: float = 1e-9) -> list[int]:
        """Indices of quadratic rows whose matrix has a negative eigenvalue."""
        bad = []
        for t, qc in enumerate(self.quad_constraints):
            _, M = qc.matrix()
            if M.size and np.linalg.eigvalsh(M).min() < -tol * max(1.0, np.abs(M).max()):
                bad.append(t)
        return bad

    def linear_arrays(self):
        """(A csr, row_lo, row_hi) for the linear rows."""
        rows, cols, vals = [], [], []
        lo = np.empty(len(self.constraints))
        hi = np.empty(len(self.constraints))
        for i, c in enumerate(self.constraints):
            for j, a in c.coeffs.items():
                rows.append(i)
                cols.append(j)
                vals.append(a)
            lo[i] = c.rhs if c.relation in ("=", ">=") else -np.inf
            hi[i] = c.rhs if c.relation in ("=", "<=") else np.inf
        A = sp.csr_matrix((vals, (rows, cols)), shape=(len(self.constraints), self.n_vars))
        return A, lo, hi

    # -- text dump --------------------------------------------------------
    def dumps(self) -> str:
        """LP-like text: one row per line in emission order."""
        names = [v.name for v in self.variables]

        def term(c, name):
            return f"{'+' if c >= 0 else '-'} {_num(abs(c))} {name}"

        def lin(coeffs):
            if not coeffs:
                return "0"
            return " ".join(term(c, names[j]) for j, c in sorted(coeffs.items()))

        out = [f"\\ {self.name}", "maximize", f" obj: {lin(self.objective)}", "subject to"]
        for i, c in enumerate(self.constraints):
            label = c.name or f"c{i}"
            out.append(f" {label}: {lin(c.coeffs)} {c.relation} {_num(c.rhs)}")
        if self.quad_constraints:
            out.append("quadratic")
            for i, qc in enumerate(self.quad_constraints):
                label = qc.name or f"q{i}"
                qt = " ".join(
                    term(c, f"{names[a]}^2" if a == b else f"{names[a]} * {names[b]}")
                    for (a, b), c in sorted(qc.quad.items()))
                out.append(f" {label}: [ {qt} ] {lin(qc.linear)} <= {_num(qc.rhs)}")
        out.append("bounds")
        for v in self.variables:
            out.append(f" {_num(v.lower)} <= {v.name} <= {_num(v.upper)}")
        bins = [v.name for v in self.variables if v.kind == BINARY]
        if bins:
            out.append("binaries")
            out.append(" " + " ".join(bins))
        out.append("end")
        return "\n".join(out) + "\n"


def _num(v: float) -> str:
    if v == math.inf:
        return "inf"
    if v == -math.inf:
        return "-inf"
    return f"{v:.15g}"


# -- engine plumbing ------------------------------------------------------
def _make_engine(prog: MixedProgram, opts: SolverOptions, extra_rows=None):
    A, lo, hi = prog.linear_arrays()
    col_lo = np.array([max(v.lower, -BIG) for v in prog.variables], dtype=float)
    col_hi = np.array([min(v.upper, BIG) for v in prog.variables], dtype=float)
    cost = np.zeros(prog.n_vars)
    for j, c in prog.objective.items():
        cost[j] = -c
    return LPEngine(A.tocsc(), lo, hi, col_lo, col_hi, cost,
                    bland_after=opts.bland_after, max_pivots=opts.max_pivots,
                    kernel=opts.kernel)


def _unbounded(prog: MixedProgram, x) -> bool:
    for j, v in enumerate(prog.variables):
        if (math.isinf(v.upper) and x[j] >= 0.999 * BIG) or (math.isinf(v.lower) and x[j] <= -0.999 * BIG):
            return True
    return False


def solve_lp(prog: MixedProgram, options: SolverOptions | None = None) -> SolveOutcome:
    """LP optimum with row duals (sensitivity of the max objective to each rhs)."""
    opts = options or SolverOptions()
    if prog.binaries or prog.quad_constraints:
        raise ValueError("solve_lp takes programs without binaries or quadratic rows")
    if _bounds_crossed(prog):
        return SolveOutcome(Status.INFEASIBLE)
    eng = _make_engine(prog, opts)
    st = eng.solve()
    if st == INFEASIBLE:
        return SolveOutcome(Status.INFEASIBLE, pivots=eng.pivots)
    if st != OPTIMAL:
        return SolveOutcome(Status.ITER_LIMIT, pivots=eng.pivots)
    x = eng.x.copy()
    if _unbounded(prog, x):
        return SolveOutcome(Status.UNBOUNDED, point=x, pivots=eng.pivots)
    duals = -eng.row_duals()
    return SolveOutcome(Status.OPTIMAL, prog.objective_value(x), x, duals, pivots=eng.pivots)


def _bounds_crossed(prog):
    return any(v.lower > v.upper for v in prog.variables)


class _BranchAndBound:
    """Best-bound MILP search on one engine; the engine persists across cut rounds."""

    def __init__(self, prog: MixedProgram, opts: SolverOptions):
        self.prog = prog
        self.opts = opts
        self.engine = _make_engine(prog, opts)
        self.bins = prog.binaries
        self.root_lo = {}
        self.root_hi = {}
        for j in self.bins:
            v = prog.variables[j]
            # bound tightening on binaries
            self.root_lo[j] = float(math.ceil(v.lower - opts.int_tol))
            self.root_hi[j] = float(math.floor(v.upper + opts.int_tol))
        self.root_basis = None
        self.nodes = 0

    def add_cuts(self, cuts):
        rows, cols, vals, rhs = [], [], [], []
        for t, (coeffs, r) in enumerate(cuts):
            for j, a in coeffs.items():
                rows.append(t)
                cols.append(j)
                vals.append(a)
            rhs.append(r)
        M = sp.csr_matrix((vals, (rows, cols)), shape=(len(cuts), self.prog.n_vars))
        if self.root_basis is not None:
            self.engine.load(self.root_basis)
        self.engine.add_rows(M, np.full(len(cuts), -np.inf), np.array(rhs))
        self.root_basis = self.engine.snapshot()

    def _apply(self, fixes):
        eng = self.engine
        for j in self.bins:
            lo, hi = fixes.get(j, (self.root_lo[j], self.root_hi[j]))
            eng.set_col_bounds(j, lo, hi)

    def run(self) -> SolveOutcome:
        opts = self.opts
        if any(self.root_lo[j] > self.root_hi[j] for j in self.bins) or _bounds_crossed(self.prog):
            return SolveOutcome(Status.INFEASIBLE)
        counter = itertools.count()
        heap = [(-math.inf, next(counter), {}, None)]
        best = -math.inf
        best_x = None
        first = True
        while heap:
            negb, _nid, fixes, warm = heapq.heappop(heap)
            if best_x is not None and -negb <= best + 1e-9 * max(1.0, abs(best)):
                continue
            if self.nodes >= opts.node_limit:
                return SolveOutcome(Status.ITER_LIMIT, best, best_x, nodes=self.nodes,
                                    pivots=self.engine.pivots)
            self._apply(fixes)
            self.engine.load(warm if warm is not None else self.root_basis)
            st = self.engine.solve()
            self.nodes += 1
            if first:
                first = False
                if st == OPTIMAL:
                    self.root_basis = self.engine.snapshot()
            if st == INFEASIBLE:
                continue
            if st != OPTIMAL:
                return SolveOutcome(Status.ITER_LIMIT, nodes=self.nodes, pivots=self.engine.pivots)
            x = self.engine.x
            obj = self.prog.objective_value(x)
            if best_x is not None and obj <= best + 1e-9 * max(1.0, abs(best)):
                continue
            branch, frac_best = -1, opts.int_tol
            for j in self.bins:
                f = abs(x[j] - round(x[j]))
                if f > frac_best + 1e-15:
                    branch, frac_best = j, f
            if branch < 0:
                best = obj
                best_x = x.copy()
                for j in self.bins:
                    best_x[j] = float(round(best_x[j]))
                continue
            snap = self.engine.snapshot()
            down = dict(fixes)
            down[branch] = (0.0, 0.0)
            up = dict(fixes)
            up[branch] = (1.0, 1.0)
            heapq.heappush(heap, (-obj, next(counter), down, snap))
            heapq.heappush(heap, (-obj, next(counter), up, snap))
        if best_x is None:
            return SolveOutcome(Status.INFEASIBLE, nodes=self.nodes, pivots=self.engine.pivots)
        if _unbounded(self.prog, best_x):
            return SolveOutcome(Status.UNBOUNDED, point=best_x, nodes=self.nodes)
        return SolveOutcome(Status.OPTIMAL, best, best_x, nodes=self.nodes, pivots=self.engine.pivots)


def solve_milp(prog: MixedProgram, options: SolverOptions | None = None) -> SolveOutcome:
    """Mixed-binary LP by best-bound branch-and-bound on the most fractional binary."""
    opts = options or SolverOptions()
    if prog.quad_constraints:
        raise ValueError("solve_milp takes programs without quadratic rows")
    return _BranchAndBound(prog, opts).run()


def solve_miconvex(prog: MixedProgram, options: SolverOptions | None = None) -> SolveOutcome:
    """Outer approximation: re-solve the MILP with gradient cuts until quad rows hold."""
    opts = options or SolverOptions()
    bad = prog.non_psd()
    if bad:
        raise ValueError(f"quadratic rows {bad} are not positive semidefinite")
    bb = _BranchAndBound(prog, opts)
    n_cuts = 0
    nodes = 0
    while True:
        out = bb.run()
        nodes = bb.nodes
        # an unbounded ray may still be cut off by the quadratic rows
        ray_cut = out.status == Status.UNBOUNDED and out.point is not None and any(
            qc.value(out.point) > opts.oa_tol for qc in prog.quad_constraints)
        if out.status != Status.OPTIMAL and not ray_cut:
            out.cuts = n_cuts
            out.nodes = nodes
            return out
        x = out.point
        new = []
        for qc in prog.quad_constraints:
            if qc.value(x) > opts.oa_tol:
                new.append(qc.cut(x))
        if not new:
            out.cuts = n_cuts
            out.nodes = nodes
            return out
        if n_cuts + len(new) > opts.cut_cap:
            return SolveOutcome(Status.ITER_LIMIT, out.objective, x, cuts=n_cuts, nodes=nodes)
        n_cuts += len(new)
        bb.add_cuts(new)


def solve(prog: MixedProgram, options: SolverOptions | None = None) -> SolveOutcome:
    """Dispatch on program content."""
    if prog.quad_constraints:
        return solve_miconvex(prog, options)
    if prog.binaries:
        return solve_milp(prog, options)
    return solve_lp(prog, options)
