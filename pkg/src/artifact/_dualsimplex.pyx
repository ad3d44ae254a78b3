# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled bounded dual simplex iterations over an explicit basis inverse.

Same pivot rules as ``_dualsimplex_py.iterate``; on small LPs the two agree
pivot for pivot, on large ones summation order can break near-ties differently. The caller owns all
arrays; they are updated in place. Rows are ``A x - s = 0`` so the column
of slack ``n + i`` is ``-e_i``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

cdef enum:
    OPTIMAL = 0
    INFEASIBLE = 1
    ITER_LIMIT = 2
    REFACTOR = 3

cdef enum:
    BASIC = 0
    AT_LOWER = 1
    AT_UPPER = 2


def iterate(const double[::1] a_data, const int[::1] a_idx, const int[::1] a_ptr,
            int m, int n,
            const double[::1] lo, const double[::1] hi, const double[::1] cost,
            cnp.int64_t[::1] basis, signed char[::1] state,
            double[:, ::1] binv, double[::1] xval, double[::1] dj,
            long max_pivots, double ptol, double dtol, double pivtol,
            long bland_after, cnp.int64_t[::1] counters):
    """Run at most ``max_pivots`` pivots; counters = [degenerate streak, bland flag, total]."""
    cdef Py_ssize_t i, j, k, r, q, p, it, nt = n + m
    cdef double v, infeas, best, s, aj, dabs, ratio, tmax, bigalpha, theta_d, theta_p
    cdef double pivot, target, f
    cdef bint to_lower, bland, eligible
    cdef long best_var
    cdef double[::1] alpha = np.zeros(nt)
    cdef double[::1] col = np.zeros(m)
    cdef double[::1] rowr

    for it in range(max_pivots):
        bland = counters[1] != 0
        # leaving row: largest bound violation (Bland: smallest variable index)
        r = -1
        best = 0.0
        best_var = nt
        for i in range(m):
            p = basis[i]
            v = xval[p]
            if v < lo[p] - ptol:
                infeas = lo[p] - v
            elif v > hi[p] + ptol:
                infeas = v - hi[p]
            else:
                continue
            if bland:
                if p < best_var:
                    best_var = p
                    r = i
            elif infeas > best:
                best = infeas
                r = i
        if r < 0:
            return OPTIMAL
        p = basis[r]
        to_lower = xval[p] < lo[p]
        rowr = binv[r]

        # pivot row alpha_j = (B^-1)_r a_j for nonbasic columns
        for j in range(n):
            if state[j] == BASIC:
                continue
            s = 0.0
            for k in range(a_ptr[j], a_ptr[j + 1]):
                s += rowr[a_idx[k]] * a_data[k]
            alpha[j] = s
        for i in range(m):
            if state[n + i] != BASIC:
                alpha[n + i] = -rowr[i]

        # ratio test: Harris two-pass, Bland takes the plain minimum
        tmax = 1e300
        for j in range(nt):
            if state[j] == BASIC or lo[j] == hi[j]:
                continue
            aj = alpha[j]
            if to_lower:
                eligible = (state[j] == AT_LOWER and aj < -pivtol) or (state[j] == AT_UPPER and aj > pivtol)
            else:
                eligible = (state[j] == AT_LOWER and aj > pivtol) or (state[j] == AT_UPPER and aj < -pivtol)
            if not eligible:
                continue
            if state[j] == AT_LOWER:
                dabs = dj[j] if dj[j] > 0.0 else 0.0
            else:
                dabs = -dj[j] if dj[j] < 0.0 else 0.0
            if bland:
                ratio = dabs / fabs(aj)
            else:
                ratio = (dabs + dtol) / fabs(aj)
            if ratio < tmax:
                tmax = ratio
        if tmax >= 1e300:
            return INFEASIBLE
        q = -1
        bigalpha = 0.0
        for j in range(nt):
            if state[j] == BASIC or lo[j] == hi[j]:
                continue
            aj = alpha[j]
            if to_lower:
                eligible = (state[j] == AT_LOWER and aj < -pivtol) or (state[j] == AT_UPPER and aj > pivtol)
            else:
                eligible = (state[j] == AT_LOWER and aj > pivtol) or (state[j] == AT_UPPER and aj < -pivtol)
            if not eligible:
                continue
            if state[j] == AT_LOWER:
                dabs = dj[j] if dj[j] > 0.0 else 0.0
            else:
                dabs = -dj[j] if dj[j] < 0.0 else 0.0
            ratio = dabs / fabs(aj)
            if bland:
                if ratio <= tmax:
                    q = j
                    break
            elif ratio <= tmax and fabs(aj) > bigalpha:
                bigalpha = fabs(aj)
                q = j
        if q < 0:
            return INFEASIBLE

        if state[q] == AT_LOWER:
            theta_d = dj[q] if dj[q] > 0.0 else 0.0
        else:
            theta_d = -dj[q] if dj[q] < 0.0 else 0.0
        theta_d = theta_d / fabs(alpha[q])

        # dual update
        for j in range(nt):
            if state[j] == BASIC:
                continue
            if to_lower:
                dj[j] += theta_d * alpha[j]
            else:
                dj[j] -= theta_d * alpha[j]
        dj[q] = 0.0
        dj[p] = theta_d if to_lower else -theta_d

        # entering column B^-1 a_q
        if q < n:
            for i in range(m):
                col[i] = 0.0
            for k in range(a_ptr[q], a_ptr[q + 1]):
                f = a_data[k]
                j = a_idx[k]
                for i in range(m):
                    col[i] += binv[i, j] * f
        else:
            for i in range(m):
                col[i] = -binv[i, q - n]
        pivot = col[r]

        # primal update
        target = lo[p] if to_lower else hi[p]
        theta_p = (xval[p] - target) / pivot
        for i in range(m):
            if col[i] != 0.0:
                xval[basis[i]] -= theta_p * col[i]
        xval[q] += theta_p
        xval[p] = target

        basis[r] = q
        state[q] = BASIC
        state[p] = AT_LOWER if to_lower else AT_UPPER

        # basis inverse update
        for k in range(m):
            rowr[k] = rowr[k] / pivot
        for i in range(m):
            if i == r:
                continue
            f = col[i]
            if f != 0.0:
                for k in range(m):
                    binv[i, k] -= f * rowr[k]

        if theta_d <= 1e-12:
            counters[0] += 1
            if counters[0] >= bland_after:
                counters[1] = 1
        else:
            counters[0] = 0
        counters[2] += 1
    return REFACTOR
