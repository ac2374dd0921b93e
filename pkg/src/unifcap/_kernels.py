"""Compiled inner loops of the discretized solver.

Transcendental functions stay in numpy (vectorized); these kernels do the
scatter, prefix-sum and reduction passes that numpy would split into many
temporaries.
"""

import math

import numpy as np
from numba import njit

Q_FLOOR = 1e-300


@njit(cache=True)
def forward(p, lo_cell, lo_frac, hi_cell, hi_frac, L, acc_w, acc_p, q):
    """q = W^T p, clipped below at Q_FLOOR."""
    acc_w[:] = 0.0
    acc_p[:] = 0.0
    for i in range(p.size):
        pi = p[i]
        acc_w[hi_cell[i]] += pi
        acc_p[hi_cell[i]] += pi * hi_frac[i]
        acc_w[lo_cell[i]] -= pi
        acc_p[lo_cell[i]] -= pi * lo_frac[i]
    # suffix sums run right to left so small tails keep their precision
    inv = 1.0 / L
    tail = 0.0
    for m in range(q.size - 1, -1, -1):
        tail += acc_w[m + 1]
        v = (tail + acc_p[m]) * inv
        q[m] = v if v > Q_FLOOR else Q_FLOOR


@njit(cache=True)
def backward(f, lo_cell, lo_frac, hi_cell, hi_frac, L, prefix, out):
    """out = W f."""
    g = f.size
    inv = 1.0 / L
    prefix[0] = 0.0
    for m in range(g):
        prefix[m + 1] = prefix[m] + f[m]
    for i in range(out.size):
        a = lo_cell[i]
        z = hi_cell[i]
        fz = f[z] if z < g else 0.0
        fa = f[a] if a < g else 0.0
        out[i] = ((prefix[z] + hi_frac[i] * fz) - (prefix[a] + lo_frac[i] * fa)) * inv


@njit(cache=True)
def scores(D, p, logp, c, lam, v):
    """Gap ingredients and the unnormalized log update v = log p + D - lam c."""
    smax = -np.inf
    avg = 0.0
    info = 0.0
    cost = 0.0
    vmax = -np.inf
    for i in range(D.size):
        s = D[i] - lam * c[i]
        if s > smax:
            smax = s
        avg += p[i] * s
        info += p[i] * D[i]
        cost += p[i] * c[i]
        vi = logp[i] + s
        v[i] = vi
        if vi > vmax:
            vmax = vi
    return smax, avg, info, cost, vmax


@njit(cache=True)
def normalize(e, c, v, vmax, p, logp):
    """p = e / sum(e), log p from v; returns mean and variance of c under p."""
    z = 0.0
    m1 = 0.0
    m2 = 0.0
    for i in range(e.size):
        w = e[i]
        z += w
        m1 += w * c[i]
        m2 += w * c[i] * c[i]
    lz = math.log(z)
    for i in range(e.size):
        p[i] = e[i] / z
        logp[i] = v[i] - vmax - lz
    m1 /= z
    m2 /= z
    return m1, max(m2 - m1 * m1, 0.0)
