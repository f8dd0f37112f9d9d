"""Posterior predictive kriging of directions at new sites."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .circular import TWO_PI, atan2_star, wrap
from .exceptions import InvalidArgumentError
from .projected import PgspPosterior, t_matrix
from .spatial import corr_matrix, cross_distances, distance_matrix, factorize
from .wrapped import WgspPosterior

#: targets closer than this (km) to a site reuse its observation
COINCIDENT_KM = 1e-3


@dataclass
class KrigResult:
    """Prediction at one target site.

    ``g_c`` and ``g_s`` are the Monte Carlo estimates of the predictive
    mean cosine and sine; ``direction`` and ``concentration`` are their
    angle and length.
    """

    direction: float
    concentration: float
    predictive_draws: np.ndarray
    g_c: float
    g_s: float


def _finish(g_c: float, g_s: float, draws: np.ndarray) -> KrigResult:
    conc = min(1.0, math.hypot(g_c, g_s))
    direction = atan2_star(g_s, g_c) if conc > 0 else 0.0
    return KrigResult(direction=direction, concentration=conc, predictive_draws=draws, g_c=g_c, g_s=g_s)


def _targets(targets) -> np.ndarray:
    t = np.asarray(targets, dtype=float)
    if t.size == 0:
        return np.zeros((0, 2))
    t = np.atleast_2d(t)
    if t.shape[1] != 2 or not np.all(np.isfinite(t)):
        raise InvalidArgumentError("targets must be finite (easting, northing) pairs")
    return t


def _coincident(coords: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Index of the observed site each target coincides with, or -1."""
    if targets.shape[0] == 0:
        return np.zeros(0, dtype=int)
    d = cross_distances(targets, coords)
    nearest = d.argmin(axis=1)
    return np.where(d[np.arange(len(targets)), nearest] <= COINCIDENT_KM, nearest, -1)


def wrap_conditional(x, k, mu, sigma2, phi, coords, targets) -> Tuple[np.ndarray, np.ndarray]:
    """Conditional mean and variance of the unwrapped field at each target,
    given ``x + 2 pi k`` under a single parameter draw."""
    coords = np.asarray(coords, dtype=float)
    targets = _targets(targets)
    return _wrap_moments(x, k, mu, sigma2, phi, distance_matrix(coords), cross_distances(coords, targets))


def _wrap_moments(x, k, mu, sigma2, phi, D, dist0):
    factor = factorize(corr_matrix(D, phi))
    rho0 = np.exp(-phi * dist0)
    a = factor.half_solve(rho0)
    w = factor.half_solve(np.asarray(x, dtype=float) + TWO_PI * np.asarray(k) - mu)
    mean = mu + a.T @ w
    var = sigma2 * np.maximum(0.0, 1.0 - np.sum(a * a, axis=0))
    return mean, var


def wrap_krig(post: WgspPosterior, data=None, targets=None, seed: Optional[int] = 0) -> List[KrigResult]:
    """Krige directions from a wrapped-model posterior.

    For every retained draw the unwrapped field at the target is
    Gaussian given the observed field; ``g_c`` and ``g_s`` average its
    characteristic function, attenuated by ``exp(-var / 2)``.
    """
    x, coords = _observed(post, data)
    targets = _targets(targets)
    m = targets.shape[0]
    mu, sigma2, phi, k = post.draws("mu"), post.draws("sigma2"), post.draws("phi"), post.draws("k")
    B = mu.size
    rng = np.random.default_rng(seed)
    if m == 0:
        return []
    gc = np.zeros(m)
    gs = np.zeros(m)
    draws = np.empty((m, B))
    z = rng.standard_normal((B, m))
    D = distance_matrix(coords)
    dist0 = cross_distances(coords, targets)
    for b in range(B):
        mean, var = _wrap_moments(x, k[b], mu[b], sigma2[b], phi[b], D, dist0)
        att = np.exp(-0.5 * var)
        gc += att * np.cos(mean)
        gs += att * np.sin(mean)
        draws[:, b] = mean + np.sqrt(var) * z[b]
    gc /= B
    gs /= B
    draws = np.mod(draws, TWO_PI)
    out = []
    hit = _coincident(coords, targets)
    for j in range(m):
        if hit[j] >= 0:
            obs = float(x[hit[j]])
            out.append(_finish(math.cos(obs), math.sin(obs), np.full(B, obs)))
        else:
            out.append(_finish(float(gc[j]), float(gs[j]), draws[j]))
    return out


def proj_conditional(x, r, mu, tau2, rho, phi, coords, targets):
    """Conditional mean ``(m, 2)`` and covariances ``(m, 2, 2)`` of the
    bivariate field at each target under a single parameter draw."""
    coords = np.asarray(coords, dtype=float)
    targets = _targets(targets)
    return _proj_moments(x, r, mu, tau2, rho, phi, distance_matrix(coords), cross_distances(coords, targets))


def _proj_moments(x, r, mu, tau2, rho, phi, D, dist0):
    factor = factorize(corr_matrix(D, phi))
    rho0 = np.exp(-phi * dist0)
    weights = factor.solve(rho0)  # R^{-1} rho0, one column per target
    x = np.asarray(x, dtype=float)
    r = np.asarray(r, dtype=float)
    e = np.column_stack([r * np.cos(x), r * np.sin(x)]) - np.asarray(mu)
    mean = np.asarray(mu)[None, :] + weights.T @ e
    shrink = np.maximum(0.0, 1.0 - np.sum(rho0 * weights, axis=0))
    cov = shrink[:, None, None] * t_matrix(tau2, rho)[None, :, :]
    return mean, cov


def proj_krig(post: PgspPosterior, data=None, targets=None, seed: Optional[int] = 0) -> List[KrigResult]:
    """Krige directions from a projected-model posterior.

    Each retained draw yields one bivariate predictive sample, projected
    to an angle; the direction and concentration summarise those angles.
    """
    x, coords = _observed(post, data)
    targets = _targets(targets)
    m = targets.shape[0]
    if m == 0:
        return []
    mu, tau2, rho, phi, r = (post.draws(n) for n in ("mu", "tau2", "rho", "phi", "r"))
    B = tau2.size
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((B, m, 2))
    angles = np.empty((m, B))
    D = distance_matrix(coords)
    dist0 = cross_distances(coords, targets)
    for b in range(B):
        mean, cov = _proj_moments(x, r[b], mu[b], tau2[b], rho[b], phi[b], D, dist0)
        chol = np.linalg.cholesky(t_matrix(tau2[b], rho[b]))
        # cov is shrink * T and T[1, 1] == 1
        ys = mean + np.sqrt(cov[:, 1, 1])[:, None] * (z[b] @ chol.T)
        angles[:, b] = np.arctan2(ys[:, 1], ys[:, 0])
    angles = wrap(angles)
    out = []
    hit = _coincident(coords, targets)
    for j in range(m):
        if hit[j] >= 0:
            obs = float(x[hit[j]])
            out.append(_finish(math.cos(obs), math.sin(obs), np.full(B, obs)))
            continue
        a = np.atleast_1d(angles[j])
        c, s = float(np.mean(np.cos(a))), float(np.mean(np.sin(a)))
        out.append(_finish(c, s, a))
    return out


def _observed(post, data):
    """Observed directions and coordinates, checked against the posterior's sites."""
    if data is None:
        return np.asarray(post.x), np.asarray(post.coords)
    ids = tuple(data.site_id)
    if ids != tuple(post.site_ids):
        missing = sorted(set(post.site_ids) - set(ids))
        extra = sorted(set(ids) - set(post.site_ids))
        if missing or extra:
            raise InvalidArgumentError(
                f"data and posterior sites differ: missing from data {missing}, unknown to posterior {extra}"
            )
        order = {s: i for i, s in enumerate(ids)}
        idx = [order[s] for s in post.site_ids]
        data = data.subset(idx)
    return np.asarray(data.direction), data.coords
