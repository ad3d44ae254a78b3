"""Pure numpy fallback for the dual simplex iteration kernel.

Same signature, array contract and pivot rules as the compiled module; only
floating-point summation order differs.
"""

import numpy as np

OPTIMAL, INFEASIBLE, ITER_LIMIT, REFACTOR = 0, 1, 2, 3
BASIC, AT_LOWER, AT_UPPER = 0, 1, 2


def iterate(a_data, a_idx, a_ptr, m, n, lo, hi, cost, basis, state, binv, xval, dj,
            max_pivots, ptol, dtol, pivtol, bland_after, counters):
    """Run at most ``max_pivots`` pivots; counters = [degenerate streak, bland flag, total]."""
    nt = n + m
    # column index of every structural nonzero, used for the pivot-row product
    col_of = np.repeat(np.arange(n), np.diff(a_ptr))
    movable = lo != hi
    alpha = np.zeros(nt)
    for _ in range(max_pivots):
        bland = counters[1] != 0
        xb = xval[basis]
        lob = lo[basis]
        hib = hi[basis]
        below = lob - xb
        above = xb - hib
        infeas = np.where(below > ptol, below, np.where(above > ptol, above, 0.0))
        cand = np.nonzero(infeas > 0.0)[0]
        if cand.size == 0:
            return OPTIMAL
        if bland:
            r = int(cand[np.argmin(basis[cand])])
        else:
            r = int(cand[np.argmax(infeas[cand])])
        p = int(basis[r])
        to_lower = xval[p] < lo[p]
        rowr = binv[r]

        alpha[:n] = np.bincount(col_of, weights=rowr[a_idx] * a_data, minlength=n)
        alpha[n:] = -rowr
        nonbasic = state != BASIC
        at_lo = state == AT_LOWER
        at_up = state == AT_UPPER
        if to_lower:
            elig = (at_lo & (alpha < -pivtol)) | (at_up & (alpha > pivtol))
        else:
            elig = (at_lo & (alpha > pivtol)) | (at_up & (alpha < -pivtol))
        elig &= movable & nonbasic
        idx = np.nonzero(elig)[0]
        if idx.size == 0:
            return INFEASIBLE
        dsel = dj[idx]
        dabs = np.where(at_lo[idx], np.maximum(dsel, 0.0), np.maximum(-dsel, 0.0))
        aabs = np.abs(alpha[idx])
        ratio = dabs / aabs
        if bland:
            tmax = ratio.min()
            q = int(idx[np.nonzero(ratio <= tmax)[0][0]])
        else:
            tmax = ((dabs + dtol) / aabs).min()
            ok = np.nonzero(ratio <= tmax)[0]
            if ok.size == 0:
                return INFEASIBLE
            q = int(idx[ok[np.argmax(aabs[ok])]])

        dq = dj[q]
        theta_d = (max(dq, 0.0) if state[q] == AT_LOWER else max(-dq, 0.0)) / abs(alpha[q])
        if to_lower:
            dj[nonbasic] += theta_d * alpha[nonbasic]
        else:
            dj[nonbasic] -= theta_d * alpha[nonbasic]
        dj[q] = 0.0
        dj[p] = theta_d if to_lower else -theta_d

        if q < n:
            lo_k, hi_k = a_ptr[q], a_ptr[q + 1]
            col = binv[:, a_idx[lo_k:hi_k]] @ a_data[lo_k:hi_k]
        else:
            col = -binv[:, q - n]
        pivot = col[r]

        target = lo[p] if to_lower else hi[p]
        theta_p = (xval[p] - target) / pivot
        xval[basis] -= theta_p * col
        xval[q] += theta_p
        xval[p] = target

        basis[r] = q
        state[q] = BASIC
        state[p] = AT_LOWER if to_lower else AT_UPPER

        rowr /= pivot
        col = col.copy()
        col[r] = 0.0
        binv -= np.outer(col, rowr)

        if theta_d <= 1e-12:
            counters[0] += 1
            if counters[0] >= bland_after:
                counters[1] = 1
        else:
            counters[0] = 0
        counters[2] += 1
    return REFACTOR
