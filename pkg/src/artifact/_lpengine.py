"""Bounded dual simplex engine with an explicit dense basis inverse.

Every structural column has finite bounds, so the all-slack basis with each
structural at its cost-favourable bound is dual feasible and the dual simplex
alone reaches optimality. Warm starts keep dual feasibility after bound changes
and after appending rows, which is all branch-and-bound and cutting planes need.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _dualsimplex_py

try:
    if os.environ.get("ARTIFACT_PURE_PYTHON"):
        raise ImportError("pure python kernel forced")
    from . import _dualsimplex as _kernel

    KERNEL = "compiled"
except ImportError:
    _kernel = _dualsimplex_py
    KERNEL = "python"

OPTIMAL, INFEASIBLE, ITER_LIMIT, REFACTOR = 0, 1, 2, 3
BASIC, AT_LOWER, AT_UPPER = 0, 1, 2

REFACTOR_EVERY = 100


def kernel_module(name: str | None = None):
    """Return the iteration kernel; ``name`` in {None, 'compiled', 'python'}."""
    if name is None:
        return _kernel
    if name == "python":
        return _dualsimplex_py
    if name == "compiled":
        from . import _dualsimplex

        return _dualsimplex
    raise ValueError(f"unknown kernel {name!r}")


@dataclass
class Basis:
    """Snapshot of a simplex basis for warm starts."""

    basis: np.ndarray
    state: np.ndarray


class LPEngine:
    """min c.x subject to row_lo <= A x <= row_hi and col_lo <= x <= col_hi."""

    def __init__(self, A: sp.csc_matrix, row_lo, row_hi, col_lo, col_hi, cost, *,
                 feas_tol=1e-9, dual_tol=1e-9, pivot_tol=1e-9, bland_after=1000,
                 max_pivots=1_000_000, kernel=None):
        A = sp.csc_matrix(A, dtype=float)
        A.sort_indices()
        self.m, self.n = A.shape
        self.A = A
        self.a_data = np.ascontiguousarray(A.data, dtype=np.float64)
        self.a_idx = np.ascontiguousarray(A.indices, dtype=np.int32)
        self.a_ptr = np.ascontiguousarray(A.indptr, dtype=np.int32)
        self.lo = np.concatenate([np.asarray(col_lo, float), np.asarray(row_lo, float)])
        self.hi = np.concatenate([np.asarray(col_hi, float), np.asarray(row_hi, float)])
        if not (np.all(np.isfinite(self.lo[: self.n])) and np.all(np.isfinite(self.hi[: self.n]))):
            raise ValueError("structural bounds must be finite")
        self.cost = np.concatenate([np.asarray(cost, float), np.zeros(self.m)])
        self.feas_tol = feas_tol
        self.dual_tol = dual_tol
        self.pivot_tol = pivot_tol
        self.bland_after = bland_after
        self.max_pivots = max_pivots
        self.kernel = kernel_module(kernel)
        self.pivots = 0
        self._slack_start()

    # -- state management -------------------------------------------------
    def _slack_start(self):
        n, m = self.n, self.m
        self.basis = np.arange(n, n + m, dtype=np.int64)
        self.state = np.full(n + m, AT_LOWER, dtype=np.int8)
        self.state[:n][self.cost[:n] < 0] = AT_UPPER
        self.state[n:] = BASIC
        self.binv = -np.eye(m)
        self._place_nonbasic()
        self._recompute_primal()
        self.dj = self.cost.copy()
        self.dj[n:] = 0.0

    def snapshot(self) -> Basis:
        return Basis(self.basis.copy(), self.state.copy())

    def load(self, warm: Basis | None):
        """Install a basis (or the slack basis) and refactorize."""
        if warm is None:
            self._slack_start()
            return
        self.basis = warm.basis.copy()
        self.state = warm.state.copy()
        self.refactor()

    def set_col_bounds(self, j: int, lo: float, hi: float):
        self.lo[j] = lo
        self.hi[j] = hi

    def add_rows(self, rows: sp.csr_matrix, row_lo, row_hi):
        """Append rows with their slacks basic; dual feasibility is preserved."""
        rows = sp.csr_matrix(rows, dtype=float)
        k = rows.shape[0]
        n, m = self.n, self.m
        A = sp.vstack([self.A.tocsr(), rows]).tocsc()
        A.sort_indices()
        self.A = A
        self.a_data = np.ascontiguousarray(A.data, dtype=np.float64)
        self.a_idx = np.ascontiguousarray(A.indices, dtype=np.int32)
        self.a_ptr = np.ascontiguousarray(A.indptr, dtype=np.int32)
        # slack columns shift from n+i; old slacks keep positions, new ones append
        self.lo = np.concatenate([self.lo, np.asarray(row_lo, float)])
        self.hi = np.concatenate([self.hi, np.asarray(row_hi, float)])
        self.cost = np.concatenate([self.cost, np.zeros(k)])
        x_old = self.xval
        self.xval = np.concatenate([x_old, rows @ x_old[:n]])
        self.dj = np.concatenate([self.dj, np.zeros(k)])
        self.state = np.concatenate([self.state, np.full(k, BASIC, dtype=np.int8)])
        self.basis = np.concatenate([self.basis, np.arange(n + m, n + m + k, dtype=np.int64)])
        # [[B, 0], [a_B, -I]]^-1 = [[Binv, 0], [a_B Binv, -I]]
        a_b = self._rows_on_basis(rows)
        binv = np.zeros((m + k, m + k))
        binv[:m, :m] = self.binv
        binv[m:, :m] = a_b @ self.binv
        binv[m:, m:] = -np.eye(k)
        self.binv = binv
        self.m = m + k

    def _rows_on_basis(self, rows):
        cols = []
        dense = rows.toarray()
        for b in self.basis[: self.m]:
            cols.append(dense[:, b] if b < self.n else np.zeros(rows.shape[0]))
        return np.column_stack(cols) if cols else np.zeros((rows.shape[0], 0))

    def _place_nonbasic(self):
        n = self.n
        x = np.zeros(n + self.m)
        lo_mask = self.state == AT_LOWER
        up_mask = self.state == AT_UPPER
        x[lo_mask] = self.lo[lo_mask]
        x[up_mask] = self.hi[up_mask]
        self.xval = x

    def _basis_matrix(self):
        n, m = self.n, self.m
        B = np.zeros((m, m))
        Acsc = self.A
        for i, b in enumerate(self.basis):
            if b < n:
                s, e = Acsc.indptr[b], Acsc.indptr[b + 1]
                B[Acsc.indices[s:e], i] = Acsc.data[s:e]
            else:
                B[b - n, i] = -1.0
        return B

    def _recompute_primal(self):
        n = self.n
        xn = np.where(self.state == BASIC, 0.0, self.xval)
        rhs = -(self.A @ xn[:n]) + xn[n:]
        self.xval[self.basis] = self.binv @ rhs

    def _recompute_duals(self):
        n = self.n
        y = self.cost[self.basis] @ self.binv
        d = self.cost.copy()
        d[:n] -= self.A.T @ y
        d[n:] += y
        d[self.basis] = 0.0
        self.dj = d
        return y

    def refactor(self):
        try:
            self.binv = self._block_inverse()
        except np.linalg.LinAlgError:
            self._repair_singular(self._basis_matrix())
        self._place_nonbasic()
        self._recompute_primal()
        self._recompute_duals()

    def _block_inverse(self):
        """Inverse of the basis using that basic slacks are signed unit columns.

        With structural positions S on columns J, slack positions T on rows R and
        the remaining rows N, only M = A[N, J] needs a dense inverse:
        z_S = M^-1 v_N and z_T = A[R, J] z_S - v_R.
        """
        n, m = self.n, self.m
        basis = self.basis
        spos = np.flatnonzero(basis < n)
        tpos = np.flatnonzero(basis >= n)
        rows_t = basis[tpos] - n
        covered = np.zeros(m, dtype=bool)
        covered[rows_t] = True
        rows_n = np.flatnonzero(~covered)
        if rows_n.size != spos.size:
            raise np.linalg.LinAlgError("slack rows repeat")
        cols = self.A[:, basis[spos]].tocsr()
        binv = np.zeros((m, m))
        if spos.size:
            minv = np.linalg.inv(cols[rows_n].toarray())
            if not np.all(np.isfinite(minv)):
                raise np.linalg.LinAlgError("non-finite inverse")
            binv[np.ix_(spos, rows_n)] = minv
            binv[np.ix_(tpos, rows_n)] = cols[rows_t] @ minv
        binv[tpos, rows_t] = -1.0
        return np.ascontiguousarray(binv)

    def _repair_singular(self, B):
        # swap dependent basic columns for slacks that complete the kept columns' span
        q, r, piv = _qr_pivot(B)
        m = self.m
        rank = int(np.sum(np.abs(np.diag(r)) > 1e-11 * max(1.0, abs(r[0, 0]))))
        keep = piv[:rank]
        # slack columns are signed unit vectors; pick rows by pivoted QR of the
        # component orthogonal to the kept columns
        proj = np.eye(m) - q[:, :rank] @ q[:, :rank].T
        _, _, rows = _qr_pivot(proj)
        taken = {int(self.basis[i]) - self.n for i in keep if self.basis[i] >= self.n}
        rows = [int(i) for i in rows if int(i) not in taken][: m - rank]
        for pos in range(m):
            if pos not in set(keep.tolist()):
                old = self.basis[pos]
                self.state[old] = AT_LOWER if np.isfinite(self.lo[old]) else AT_UPPER
        drop = [pos for pos in range(m) if pos not in set(keep.tolist())]
        for pos, row in zip(drop, rows):
            self.basis[pos] = self.n + row
            self.state[self.n + row] = BASIC
        self.binv = np.ascontiguousarray(np.linalg.inv(self._basis_matrix()))

    # -- solve ------------------------------------------------------------
    def _restore_dual_feasibility(self) -> bool:
        """Flip boxed nonbasics with wrong-signed reduced costs; True if any flipped."""
        bad_lo = (self.state == AT_LOWER) & (self.dj < -self.dual_tol) & np.isfinite(self.hi)
        bad_up = (self.state == AT_UPPER) & (self.dj > self.dual_tol) & np.isfinite(self.lo)
        fixed = self.lo == self.hi
        bad_lo &= ~fixed
        bad_up &= ~fixed
        if not (bad_lo.any() or bad_up.any()):
            return False
        self.state[bad_lo] = AT_UPPER
        self.state[bad_up] = AT_LOWER
        self._place_nonbasic()
        self._recompute_primal()
        return True

    def solve(self) -> int:
        counters = np.zeros(3, dtype=np.int64)
        checks = 0
        while True:
            budget = min(REFACTOR_EVERY, self.max_pivots - self.pivots)
            if budget <= 0:
                return ITER_LIMIT
            before = int(counters[2])
            status = self.kernel.iterate(
                self.a_data, self.a_idx, self.a_ptr, self.m, self.n,
                self.lo, self.hi, self.cost, self.basis, self.state, self.binv,
                self.xval, self.dj, budget, self.feas_tol, self.dual_tol,
                self.pivot_tol, self.bland_after, counters)
            self.pivots += int(counters[2]) - before
            if status == REFACTOR:
                self.refactor()
                continue
            # verify on a fresh factorization before trusting the verdict
            self.refactor()
            self._restore_dual_feasibility()
            if status == OPTIMAL and self._primal_ok():
                return OPTIMAL
            if status == INFEASIBLE and checks >= 1:
                return INFEASIBLE
            checks += 1
            if checks > 50:
                return status

    def _primal_ok(self):
        xb = self.xval[self.basis]
        lb = self.lo[self.basis]
        ub = self.hi[self.basis]
        return bool(np.all(xb >= lb - self.feas_tol) and np.all(xb <= ub + self.feas_tol))

    @property
    def x(self):
        return self.xval[: self.n]

    @property
    def objective(self):
        return float(self.cost[: self.n] @ self.xval[: self.n])

    def row_duals(self):
        """y with d_j = c_j - y.a_j; sign convention of the min problem."""
        return self.cost[self.basis] @ self.binv


def _qr_pivot(B):
    import scipy.linalg as sla

    return sla.qr(B, pivoting=True)
