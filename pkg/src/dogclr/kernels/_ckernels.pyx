# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled replacement-game kernels. Mirrors ``_pykernels`` exactly in API."""

import numpy as np

from libc.math cimport exp, log, INFINITY


cdef double _scan(const double[::1] sims, double incoming, double[::1] e,
                  double[::1] out) noexcept nogil:
    cdef Py_ssize_t n = sims.shape[0]
    cdef Py_ssize_t i
    cdef double S = 0.0, A = 0.0, ex = exp(incoming), Z, best = -INFINITY
    for i in range(n):
        e[i] = exp(sims[i])
        S += e[i]
        A += e[i] * sims[i]
    for i in range(n):
        Z = S - e[i] + ex
        out[i] = log(Z) - (A - e[i] * sims[i] + ex * incoming) / Z
        if out[i] > best:
            best = out[i]
    return best


cdef void _pick(const double[::1] u, double best, double tol,
                Py_ssize_t* idx, Py_ssize_t* ties) noexcept nogil:
    cdef Py_ssize_t i, n = u.shape[0]
    idx[0] = -1
    ties[0] = 0
    for i in range(n):
        if u[i] >= best - tol:
            if idx[0] < 0:
                idx[0] = i
            ties[0] += 1


def replacement_scan(const double[::1] sims, double incoming_sim, double tol):
    """Entropy payoff of every single-slot replacement.

    Returns (index, payoffs, tie_count) where index is the lowest slot whose
    payoff is within ``tol`` of the maximum.
    """
    cdef Py_ssize_t n = sims.shape[0]
    if n == 0:
        raise ValueError("empty similarity vector")
    u_arr = np.empty(n, dtype=np.float64)
    e_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] u = u_arr
    cdef double[::1] e = e_arr
    cdef double best
    cdef Py_ssize_t idx, ties
    with nogil:
        best = _scan(sims, incoming_sim, e, u)
        _pick(u, best, tol, &idx, &ties)
    return int(idx), u_arr, int(ties)


def sequential_replace(double[:, ::1] sims, const double[:, ::1] cross,
                       Py_ssize_t fifo_start, double tol):
    """Play one replacement game per incoming key, in order.

    ``sims[b, j]`` is the similarity of probe b to bank slot j and
    ``cross[b, c]`` the similarity of probe b to incoming key c. After key c
    lands in slot i, column i of ``sims`` is overwritten with ``cross[:, c]``.
    Returns (indices, best payoffs, tie counts, payoffs at the FIFO slot).
    """
    cdef Py_ssize_t B = sims.shape[0], M = sims.shape[1]
    cdef Py_ssize_t b, c, i, idx, ties, cursor = fifo_start
    if cross.shape[0] != B or cross.shape[1] != B:
        raise ValueError("cross must be (B, B)")
    idx_arr = np.empty(B, dtype=np.int64)
    best_arr = np.empty(B, dtype=np.float64)
    ties_arr = np.empty(B, dtype=np.int64)
    fifo_arr = np.empty(B, dtype=np.float64)
    u_arr = np.empty(M, dtype=np.float64)
    e_arr = np.empty(M, dtype=np.float64)
    cdef long long[::1] idx_v = idx_arr
    cdef double[::1] best_v = best_arr
    cdef long long[::1] ties_v = ties_arr
    cdef double[::1] fifo_v = fifo_arr
    cdef double[::1] u = u_arr
    cdef double[::1] e = e_arr
    cdef double best
    with nogil:
        for c in range(B):
            best = _scan(sims[c], cross[c, c], e, u)
            _pick(u, best, tol, &idx, &ties)
            idx_v[c] = idx
            best_v[c] = best
            ties_v[c] = ties
            fifo_v[c] = u[cursor]
            cursor = (cursor + 1) % M
            for b in range(B):
                sims[b, idx] = cross[b, c]
    return idx_arr, best_arr, ties_arr, fifo_arr
