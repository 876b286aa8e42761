# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled nearest-prototype scan and assignment accumulation."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


# must match _pykernels._SCREEN_RTOL
cdef double SCREEN_RTOL = 1e-9


def nearest_prototype(const double[:, ::1] h, const double[:, ::1] protos):
    """Expansion screen, then exact re-scoring of the candidates near the best.

    The screen ||h||^2 - 2 h.e + ||e||^2 runs with prototypes in the inner loop
    (independent accumulators, so it vectorizes without reassociation). Every
    prototype within the screen's slack of the best is re-scored with the
    sequential sum of squared differences; the first strict minimum wins, so
    ties go to the lowest index.
    """
    cdef Py_ssize_t J = h.shape[0], V = protos.shape[0], D = h.shape[1]
    cdef Py_ssize_t j, i, k, best_i
    cdef double hn, hk, diff, acc, best, best_exact, slack, pmax
    pt_arr = np.ascontiguousarray(np.asarray(protos).T)
    cdef const double[:, ::1] pt = pt_arr
    pn_arr = np.zeros(V)
    dots_arr = np.empty(V)
    idx_arr = np.empty(J, dtype=np.int64)
    dist_arr = np.empty(J, dtype=np.float64)
    cdef double[::1] pn = pn_arr
    cdef double[::1] dots = dots_arr
    cdef cnp.int64_t[::1] idx = idx_arr
    cdef double[::1] dist = dist_arr
    with nogil:
        pmax = 0.0
        for i in range(V):
            acc = 0.0
            for k in range(D):
                acc = acc + protos[i, k] * protos[i, k]
            pn[i] = acc
            if acc > pmax:
                pmax = acc
        for j in range(J):
            hn = 0.0
            for k in range(D):
                hn = hn + h[j, k] * h[j, k]
            for i in range(V):
                dots[i] = 0.0
            for k in range(D):
                hk = h[j, k]
                for i in range(V):
                    dots[i] = dots[i] + hk * pt[k, i]
            best = hn - 2.0 * dots[0] + pn[0]
            for i in range(V):
                dots[i] = hn - 2.0 * dots[i] + pn[i]
                if dots[i] < best:
                    best = dots[i]
            slack = SCREEN_RTOL * (hn + pmax) + 1e-300
            best_i = -1
            best_exact = 0.0
            for i in range(V):
                if dots[i] <= best + slack:
                    acc = 0.0
                    for k in range(D):
                        diff = h[j, k] - protos[i, k]
                        acc = acc + diff * diff
                    if best_i < 0 or acc < best_exact:
                        best_exact = acc
                        best_i = i
            idx[j] = best_i
            dist[j] = best_exact
    return idx_arr, dist_arr


def accumulate_assignments(const double[:, ::1] h, const cnp.int64_t[::1] idx, Py_ssize_t V):
    cdef Py_ssize_t J = h.shape[0], D = h.shape[1]
    cdef Py_ssize_t j, k, i
    counts_arr = np.zeros(V, dtype=np.float64)
    sums_arr = np.zeros((V, D), dtype=np.float64)
    cdef double[::1] counts = counts_arr
    cdef double[:, ::1] sums = sums_arr
    with nogil:
        for j in range(J):
            i = idx[j]
            counts[i] += 1.0
            for k in range(D):
                sums[i, k] += h[j, k]
    return counts_arr, sums_arr
