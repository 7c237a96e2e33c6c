# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled window-pair correspondence kernel.

Mirrors the pure route in ``objmap.alignment`` step for step: size-gated
putative associations, sparse distance-consistency affinity, power
iteration, and greedy compatible rounding in eigenvector order.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, exp, fabs, sqrt

cnp.import_array()

cdef double PI = 3.14159265358979323846


cdef inline double _row_value(
    const cnp.int64_t[::1] cols,
    const double[::1] vals,
    Py_ssize_t lo,
    Py_ssize_t hi,
    cnp.int64_t key,
) noexcept nogil:
    # binary search in a sorted CSR row; 0.0 when the edge is absent
    cdef Py_ssize_t mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if cols[mid] < key:
            lo = mid + 1
        elif cols[mid] > key:
            hi = mid
        else:
            return vals[mid]
    return 0.0


def select_window_associations(
    double[:, ::1] pos_i not None,
    double[::1] sizes_i not None,
    double[:, ::1] pos_j not None,
    double[::1] sizes_j not None,
    double r_lim,
    double eps_lim,
    double sigma_c,
    int power_iters,
    double power_tol,
):
    """Selected associations for one window pair.

    Returns two int64 arrays (window-local indices into window i and j) in
    greedy selection order.
    """
    cdef Py_ssize_t wi = sizes_i.shape[0]
    cdef Py_ssize_t wj = sizes_j.shape[0]
    cdef Py_ssize_t a, b, k, m = 0

    empty = (np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
    if wi == 0 or wj == 0:
        return empty

    ai_np = np.empty(wi * wj, dtype=np.int64)
    bj_np = np.empty(wi * wj, dtype=np.int64)
    wt_np = np.empty(wi * wj, dtype=np.float64)
    cdef cnp.int64_t[::1] ai = ai_np
    cdef cnp.int64_t[::1] bj = bj_np
    cdef double[::1] wt = wt_np
    cdef double ha, hb, r, s

    with nogil:
        for a in range(wi):
            ha = sizes_i[a]
            for b in range(wj):
                hb = sizes_j[b]
                s = ha + hb
                if s <= 0.0:
                    continue
                r = 2.0 * fabs(ha - hb) / s
                if r < r_lim:
                    ai[m] = a
                    bj[m] = b
                    wt[m] = 1.0 + cos(PI * r / r_lim)
                    m += 1
    if m == 0:
        return empty

    # pairwise distance tables for each window
    di_np = np.empty((wi, wi), dtype=np.float64)
    dj_np = np.empty((wj, wj), dtype=np.float64)
    cdef double[:, ::1] Di = di_np
    cdef double[:, ::1] Dj = dj_np
    cdef double dx, dy, dz, d
    with nogil:
        for a in range(wi):
            Di[a, a] = 0.0
            for b in range(a + 1, wi):
                dx = pos_i[a, 0] - pos_i[b, 0]
                dy = pos_i[a, 1] - pos_i[b, 1]
                dz = pos_i[a, 2] - pos_i[b, 2]
                d = sqrt(dx * dx + dy * dy + dz * dz)
                Di[a, b] = d
                Di[b, a] = d
        for a in range(wj):
            Dj[a, a] = 0.0
            for b in range(a + 1, wj):
                dx = pos_j[a, 0] - pos_j[b, 0]
                dy = pos_j[a, 1] - pos_j[b, 1]
                dz = pos_j[a, 2] - pos_j[b, 2]
                d = sqrt(dx * dx + dy * dy + dz * dz)
                Dj[a, b] = d
                Dj[b, a] = d

    # symmetric sparse affinity, two passes: count then fill
    cnt_np = np.zeros(m, dtype=np.int64)
    cdef cnp.int64_t[::1] cnt = cnt_np
    cdef double e
    cdef Py_ssize_t nnz = 0
    with nogil:
        for a in range(m):
            for b in range(a + 1, m):
                if ai[a] != ai[b] and bj[a] != bj[b]:
                    e = fabs(Di[ai[a], ai[b]] - Dj[bj[a], bj[b]])
                    if e <= eps_lim:
                        cnt[a] += 1
                        cnt[b] += 1
                        nnz += 2

    indptr_np = np.zeros(m + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] indptr = indptr_np
    cdef Py_ssize_t i
    for i in range(m):
        indptr[i + 1] = indptr[i] + cnt[i]

    cols_np = np.empty(nnz, dtype=np.int64)
    vals_np = np.empty(nnz, dtype=np.float64)
    cur_np = np.empty(m, dtype=np.int64)
    cdef cnp.int64_t[::1] cols = cols_np
    cdef double[::1] vals = vals_np
    cdef cnp.int64_t[::1] cur = cur_np
    cdef double two_sig2 = 2.0 * sigma_c * sigma_c
    cdef double v
    with nogil:
        for i in range(m):
            cur[i] = indptr[i]
        for a in range(m):
            for b in range(a + 1, m):
                if ai[a] != ai[b] and bj[a] != bj[b]:
                    e = fabs(Di[ai[a], ai[b]] - Dj[bj[a], bj[b]])
                    if e <= eps_lim:
                        v = exp(-(e * e) / two_sig2)
                        cols[cur[a]] = b
                        vals[cur[a]] = v
                        cur[a] += 1
                        cols[cur[b]] = a
                        vals[cur[b]] = v
                        cur[b] += 1

    # power iteration from the uniform vector
    x_np = np.empty(m, dtype=np.float64)
    y_np = np.empty(m, dtype=np.float64)
    cdef double[::1] x = x_np
    cdef double[::1] y = y_np
    cdef double norm, diff, t
    cdef int it
    with nogil:
        norm = 1.0 / sqrt(<double> m)
        for i in range(m):
            x[i] = norm
        for it in range(power_iters):
            for i in range(m):
                t = wt[i] * x[i]
                for k in range(indptr[i], indptr[i + 1]):
                    t += vals[k] * x[cols[k]]
                y[i] = t
            norm = 0.0
            for i in range(m):
                norm += y[i] * y[i]
            norm = sqrt(norm)
            if norm <= 0.0:
                break
            diff = 0.0
            for i in range(m):
                y[i] /= norm
                t = y[i] - x[i]
                diff += t * t
                x[i] = y[i]
            if sqrt(diff) < power_tol:
                break

    # guarded greedy rounding, restarted from each leading eigenvector entry
    order_np = np.argsort(-x_np, kind="stable")
    cdef cnp.intp_t[::1] order = order_np
    sel_np = np.empty(m, dtype=np.int64)
    tmp_np = np.empty(m, dtype=np.int64)
    cdef cnp.int64_t[::1] sel = sel_np
    cdef cnp.int64_t[::1] tmp = tmp_np
    cdef Py_ssize_t n_sel = 0, n_tmp
    cdef Py_ssize_t c, si, seed_pos, pos, n_seeds
    cdef bint ok
    cdef double aff, aff_sum, cur_sum, new_sum, best_u = -1.0
    n_seeds = m if m < 16 else 16
    with nogil:
        for seed_pos in range(n_seeds):
            n_tmp = 0
            cur_sum = 0.0
            for pos in range(-1, m):
                if pos == seed_pos:
                    continue
                c = order[seed_pos] if pos < 0 else order[pos]
                ok = True
                aff_sum = 0.0
                for si in range(n_tmp):
                    aff = _row_value(cols, vals, indptr[c], indptr[c + 1], tmp[si])
                    if aff <= 0.0:
                        ok = False
                        break
                    aff_sum += aff
                if not ok:
                    continue
                new_sum = cur_sum + wt[c] + 2.0 * aff_sum
                if n_tmp == 0 or new_sum * n_tmp >= cur_sum * (n_tmp + 1):
                    tmp[n_tmp] = c
                    n_tmp += 1
                    cur_sum = new_sum
            if cur_sum / n_tmp > best_u:
                best_u = cur_sum / n_tmp
                n_sel = n_tmp
                for si in range(n_tmp):
                    sel[si] = tmp[si]

    out_i = np.empty(n_sel, dtype=np.int64)
    out_j = np.empty(n_sel, dtype=np.int64)
    cdef cnp.int64_t[::1] oi = out_i
    cdef cnp.int64_t[::1] oj = out_j
    for i in range(n_sel):
        oi[i] = ai[sel[i]]
        oj[i] = bj[sel[i]]
    return out_i, out_j
