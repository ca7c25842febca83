"""Pure numpy implementation of the replacement-game kernels."""

import math

import numpy as np


def _scan(sims, incoming):
    e = np.exp(sims)
    S = e.sum()
    A = (e * sims).sum()
    ex = math.exp(incoming)
    Z = S - e + ex
    return np.log(Z) - (A - e * sims + ex * incoming) / Z


def _pick(u, tol):
    ok = u >= u.max() - tol
    return int(np.argmax(ok)), int(ok.sum())


def replacement_scan(sims, incoming_sim, tol):
    sims = np.ascontiguousarray(sims, dtype=np.float64)
    if sims.size == 0:
        raise ValueError("empty similarity vector")
    u = _scan(sims, float(incoming_sim))
    idx, ties = _pick(u, tol)
    return idx, u, ties


def sequential_replace(sims, cross, fifo_start, tol):
    B, M = sims.shape
    if cross.shape != (B, B):
        raise ValueError("cross must be (B, B)")
    idx = np.empty(B, dtype=np.int64)
    best = np.empty(B)
    ties = np.empty(B, dtype=np.int64)
    fifo = np.empty(B)
    cursor = fifo_start
    for c in range(B):
        u = _scan(sims[c], cross[c, c])
        i, t = _pick(u, tol)
        idx[c], best[c], ties[c], fifo[c] = i, u.max(), t, u[cursor]
        cursor = (cursor + 1) % M
        sims[:, i] = cross[:, c]
    return idx, best, ties, fifo
