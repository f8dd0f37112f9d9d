"""Site geometry, exponential correlation and dense Gaussian algebra."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from .circular import wrap
from .exceptions import FactorizationError, InvalidArgumentError

LOG_2PI = math.log(2.0 * math.pi)

#: diagonal jitter added once when a factorization fails
JITTER = 1e-10

#: upper bound on the 1-norm condition estimate of a factorized matrix
MAX_CONDITION = 1e10


@dataclass(frozen=True)
class SiteTable:
    """Observed directions at planar sites (coordinates in km)."""

    site_id: Tuple[str, ...]
    easting: np.ndarray
    northing: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        ids = tuple(str(s) for s in self.site_id)
        object.__setattr__(self, "site_id", ids)
        for name in ("easting", "northing", "direction"):
            arr = np.asarray(getattr(self, name), dtype=float).ravel()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = len(ids)
        if not (self.easting.size == self.northing.size == self.direction.size == n):
            raise InvalidArgumentError("site table columns have different lengths")
        if len(set(ids)) != n:
            seen = set()
            dups = sorted({s for s in ids if s in seen or seen.add(s)})
            raise InvalidArgumentError(f"duplicate site ids: {dups}")
        if not (np.all(np.isfinite(self.easting)) and np.all(np.isfinite(self.northing))):
            raise InvalidArgumentError("site coordinates must be finite")
        wrapped = np.atleast_1d(wrap(self.direction)) if n else self.direction.copy()
        wrapped.setflags(write=False)
        object.__setattr__(self, "direction", wrapped)

    def __len__(self) -> int:
        return len(self.site_id)

    @property
    def coords(self) -> np.ndarray:
        return np.column_stack([self.easting, self.northing])

    def subset(self, idx) -> "SiteTable":
        idx = np.asarray(idx, dtype=int)
        return SiteTable(
            site_id=tuple(self.site_id[i] for i in idx),
            easting=self.easting[idx],
            northing=self.northing[idx],
            direction=self.direction[idx],
        )


@dataclass(frozen=True)
class DistanceMatrix:
    d: np.ndarray
    max_dist: float

    @property
    def n(self) -> int:
        return self.d.shape[0]

    @cached_property
    def closest_pair(self) -> Tuple[int, int, float]:
        """Indices and separation of the two closest distinct sites."""
        n = self.n
        if n < 2:
            return (0, 0, math.inf)
        off = self.d + np.diag(np.full(n, np.inf))
        i, j = np.unravel_index(np.argmin(off), off.shape)
        return (int(min(i, j)), int(max(i, j)), float(off[i, j]))


@dataclass(frozen=True)
class CovarianceFactor:
    """Lower Cholesky factor ``L`` with ``L @ L.T`` equal to the source."""

    lower: np.ndarray
    logdet: float
    jittered: bool = field(default=False, compare=False)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        return linalg.cho_solve((self.lower, True), b, check_finite=False)

    def half_solve(self, b: np.ndarray) -> np.ndarray:
        """``L^{-1} b``."""
        return linalg.solve_triangular(self.lower, b, lower=True, check_finite=False)

    def inverse(self) -> np.ndarray:
        inv = self.solve(np.eye(self.dim))
        return 0.5 * (inv + inv.T)


def _check_coords(coords) -> np.ndarray:
    arr = np.asarray(coords, dtype=float)
    if arr.ndim == 1 and arr.size == 2:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1:
        raise InvalidArgumentError("coordinates must be a non-empty sequence of (easting, northing)")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("coordinates must be finite")
    return arr


def cross_distances(a, b) -> np.ndarray:
    """Euclidean distances between two coordinate sets, shape ``(len(a), len(b))``."""
    a = _check_coords(a)
    b = _check_coords(b)
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def distance_matrix(coords) -> DistanceMatrix:
    """Pairwise Euclidean distances in km."""
    arr = _check_coords(coords)
    d = cross_distances(arr, arr)
    np.fill_diagonal(d, 0.0)
    d = 0.5 * (d + d.T)
    d.setflags(write=False)
    return DistanceMatrix(d=d, max_dist=float(d.max()))


def _check_phi(phi: float) -> None:
    if not (np.isfinite(phi) and phi > 0):
        raise InvalidArgumentError(f"decay parameter must be positive, got {phi}")


def exp_corr(dist, phi: float):
    """Exponential correlation ``exp(-phi * dist)``."""
    _check_phi(phi)
    dist = np.asarray(dist, dtype=float)
    if np.any(dist < 0):
        raise InvalidArgumentError("distances must be non-negative")
    out = np.exp(-phi * dist)
    return float(out) if out.ndim == 0 else out


def corr_matrix(D: DistanceMatrix, phi: float) -> np.ndarray:
    _check_phi(phi)
    i, j, sep = D.closest_pair
    if sep <= 1e-9:
        raise FactorizationError(f"sites {i} and {j} coincide; correlation matrix is singular")
    return np.exp(-phi * D.d)


def factorize(matrix: np.ndarray, max_condition: float = MAX_CONDITION) -> CovarianceFactor:
    """Cholesky factor with a single bounded jitter retry.

    Raises
    ------
    FactorizationError
        If the matrix is not positive definite even after jitter, or its
        estimated condition number exceeds ``max_condition``.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidArgumentError("can only factorize square matrices")
    if not np.all(np.isfinite(a)):
        raise FactorizationError("matrix has non-finite entries")
    jittered = False
    lower, info = lapack.dpotrf(a, lower=1, clean=1)
    if info != 0:
        jittered = True
        a = a + JITTER * np.eye(a.shape[0])
        lower, info = lapack.dpotrf(a, lower=1, clean=1)
        if info != 0:
            raise FactorizationError(
                f"matrix is not positive definite (leading minor {info} fails after jitter)"
            )
    anorm = np.abs(a).sum(axis=0).max()
    rcond, cinfo = lapack.dpocon(lower, anorm, uplo="L")
    if cinfo != 0 or rcond <= 0 or 1.0 / rcond > max_condition:
        cond = np.inf if rcond <= 0 else 1.0 / rcond
        raise FactorizationError(
            f"matrix is too ill-conditioned to factorize reliably (condition ~ {cond:.3g})"
        )
    logdet = 2.0 * float(np.sum(np.log(np.diag(lower))))
    return CovarianceFactor(lower=lower, logdet=logdet, jittered=jittered)


def gaussian_conditional(mu_joint, cov_joint, observed_idx, observed_vals):
    """Condition a joint Gaussian on observed coordinates.

    Returns the mean and covariance of the unobserved coordinates, in
    their original order.
    """
    mu = np.asarray(mu_joint, dtype=float)
    cov = np.asarray(cov_joint, dtype=float)
    n = mu.size
    obs = np.asarray(observed_idx, dtype=int)
    vals = np.asarray(observed_vals, dtype=float)
    if obs.size != vals.size:
        raise InvalidArgumentError("observed indices and values differ in length")
    if len(set(obs.tolist())) != obs.size or np.any(obs < 0) or np.any(obs >= n):
        raise InvalidArgumentError("observed indices must be distinct and in range")
    mask = np.ones(n, dtype=bool)
    mask[obs] = False
    unobs = np.flatnonzero(mask)
    if obs.size == 0:
        return mu[unobs].copy(), cov[np.ix_(unobs, unobs)].copy()
    factor = factorize(cov[np.ix_(obs, obs)])
    cross = cov[np.ix_(unobs, obs)]
    a = factor.half_solve(cross.T)
    cond_mean = mu[unobs] + a.T @ factor.half_solve(vals - mu[obs])
    cond_cov = cov[np.ix_(unobs, unobs)] - a.T @ a
    cond_cov = 0.5 * (cond_cov + cond_cov.T)
    return cond_mean, cond_cov


def mvn_sample(mean, factor: CovarianceFactor, rng: np.random.Generator, size: Optional[int] = None):
    """Draw ``mean + L z`` with standard normal ``z`` from ``rng``."""
    mean = np.asarray(mean, dtype=float)
    if factor.lower.shape != (mean.size, mean.size):
        raise InvalidArgumentError(
            f"factor of dimension {factor.lower.shape} does not match mean of length {mean.size}"
        )
    if size is None:
        return mean + factor.lower @ rng.standard_normal(mean.size)
    z = rng.standard_normal((size, mean.size))
    return mean[None, :] + z @ factor.lower.T


def log_mvn_density(x, mean, factor: CovarianceFactor) -> float:
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    if x.shape != mean.shape or factor.lower.shape != (x.size, x.size):
        raise InvalidArgumentError("dimensions of x, mean and covariance factor disagree")
    w = factor.half_solve(x - mean)
    return -0.5 * (x.size * LOG_2PI + factor.logdet + float(w @ w))
