"""Compiled site-by-site sweeps.

Random numbers are drawn by the caller from its ``numpy`` generator and
passed in, so results depend only on the caller's seed.
"""

import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi


@njit(cache=True)
def winding_sweep(x, k, mu, sigma2, q, k_max, u):
    """Sequential Gibbs update of winding numbers; returns (k, n_underflow)."""
    n = x.size
    k = k.copy()
    resid = np.empty(n)
    for i in range(n):
        resid[i] = x[i] + TWO_PI * k[i] - mu
    z = q @ resid
    ncand = 2 * k_max + 1
    logp = np.empty(ncand)
    n_bad = 0
    for i in range(n):
        qii = q[i, i]
        cond = resid[i] - z[i] / qii
        top = -np.inf
        for c in range(ncand):
            dev = x[i] - mu + TWO_PI * (c - k_max) - cond
            logp[c] = -0.5 * qii * dev * dev / sigma2
            if logp[c] > top:
                top = logp[c]
        if not np.isfinite(top):
            n_bad += 1
            continue
        total = 0.0
        for c in range(ncand):
            logp[c] = math.exp(logp[c] - top)
            total += logp[c]
        target = u[i] * total
        acc = 0.0
        pick = ncand - 1
        for c in range(ncand):
            acc += logp[c]
            if acc > target:
                pick = c
                break
        new = pick - k_max
        if new != k[i]:
            delta = TWO_PI * (new - k[i])
            resid[i] += delta
            for j in range(n):
                z[j] += q[j, i] * delta
            k[i] = new
    return k, n_bad


@njit(cache=True)
def radius_sweep(x, r, mu1, mu2, tinv, rinv, log_sd, z_prop, log_u):
    """Sequential random-walk Metropolis on ``log r_i`` for each site.

    ``tinv`` is the inverse of the 2x2 cross-covariance block and ``rinv``
    the inverse spatial correlation. Returns (r, accepted flags).
    """
    n = x.size
    r = r.copy()
    e1 = np.empty(n)
    e2 = np.empty(n)
    for i in range(n):
        e1[i] = r[i] * math.cos(x[i]) - mu1
        e2[i] = r[i] * math.sin(x[i]) - mu2
    z1 = rinv @ e1
    z2 = rinv @ e2
    acc = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        rii = rinv[i, i]
        c, s = math.cos(x[i]), math.sin(x[i])
        # conditional mean of site i's block given the others
        m1 = mu1 + e1[i] - z1[i] / rii
        m2 = mu2 + e2[i] - z2[i] / rii
        # conditional precision is rii * tinv
        a = rii * (c * (tinv[0, 0] * c + tinv[0, 1] * s) + s * (tinv[1, 0] * c + tinv[1, 1] * s))
        b = rii * (c * (tinv[0, 0] * m1 + tinv[0, 1] * m2) + s * (tinv[1, 0] * m1 + tinv[1, 1] * m2))
        l0 = math.log(r[i])
        l1 = l0 + math.exp(log_sd[i]) * z_prop[i]
        r0 = r[i]
        r1 = math.exp(l1)
        # log target in l = log r: -a r^2 / 2 + b r + 2 l
        t0 = -0.5 * a * r0 * r0 + b * r0 + 2.0 * l0
        t1 = -0.5 * a * r1 * r1 + b * r1 + 2.0 * l1
        if t1 - t0 >= log_u[i]:
            acc[i] = True
            d1 = (r1 - r0) * c
            d2 = (r1 - r0) * s
            e1[i] += d1
            e2[i] += d2
            for j in range(n):
                z1[j] += rinv[j, i] * d1
                z2[j] += rinv[j, i] * d2
            r[i] = r1
    return r, acc
