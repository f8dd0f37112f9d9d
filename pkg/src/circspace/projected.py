"""Projected Gaussian spatial process.

A bivariate Gaussian field ``Y(s)`` with constant mean ``mu`` and
separable cross-covariance ``exp(-phi * d) * T`` is projected onto the
unit circle. The radii ``r_i = |Y(s_i)|`` are latent. Stacking is
site-major, ``(Y1(s1), Y2(s1), Y1(s2), ...)``, so the joint covariance
is ``R(phi) kron T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit, ndtr

from ._kernels import radius_sweep
from .circular import TWO_PI, atan2_star, circ_mean, wrap
from .exceptions import FactorizationError, InvalidArgumentError
from .mcmc import AdaptiveScale, ChainConfig, ChainOutput, Kernel, psrf, run_chains, rw_metropolis_step
from .spatial import (
    LOG_2PI,
    CovarianceFactor,
    DistanceMatrix,
    SiteTable,
    corr_matrix,
    distance_matrix,
    factorize,
)


def t_matrix(tau2: float, rho: float) -> np.ndarray:
    """Cross-covariance block ``[[tau2, rho*tau], [rho*tau, 1]]``."""
    tau = math.sqrt(tau2)
    return np.array([[tau2, rho * tau], [rho * tau, 1.0]])


@dataclass(frozen=True)
class PgspParams:
    mu: Tuple[float, float]
    tau2: float
    rho: float
    phi: float

    def __post_init__(self):
        mu = tuple(float(v) for v in np.asarray(self.mu, dtype=float).ravel())
        if len(mu) != 2:
            raise InvalidArgumentError("mu must be a 2-vector")
        object.__setattr__(self, "mu", mu)
        if not self.tau2 > 0:
            raise InvalidArgumentError(f"tau2 must be positive, got {self.tau2}")
        if not -1.0 < self.rho < 1.0:
            raise InvalidArgumentError(f"rho must lie in (-1, 1), got {self.rho}")
        if not self.phi > 0:
            raise InvalidArgumentError(f"phi must be positive, got {self.phi}")

    @property
    def T(self) -> np.ndarray:
        return t_matrix(self.tau2, self.rho)


@dataclass(frozen=True)
class PgspPriors:
    """Bivariate normal prior on ``mu``, inverse gamma on ``tau2``,
    uniform on ``rho`` over (-1, 1) and on ``phi``."""

    mu_mean: Tuple[float, float] = (0.0, 1.0)
    mu_cov: Tuple[Tuple[float, float], Tuple[float, float]] = ((10.0, 0.0), (0.0, 10.0))
    tau2_shape: float = 7.0
    tau2_rate: float = 6.0
    phi_lo: float = 0.001
    phi_hi: float = 0.9

    rho_lo = -1.0
    rho_hi = 1.0

    def __post_init__(self):
        m = np.asarray(self.mu_mean, dtype=float).ravel()
        c = np.asarray(self.mu_cov, dtype=float)
        if m.size != 2 or c.shape != (2, 2):
            raise InvalidArgumentError("mu_mean must be a 2-vector and mu_cov a 2x2 matrix")
        object.__setattr__(self, "mu_mean", tuple(m.tolist()))
        object.__setattr__(self, "mu_cov", tuple(tuple(row) for row in c.tolist()))
        if np.all(np.isfinite(c)):
            if not np.allclose(c, c.T) or np.any(np.linalg.eigvalsh(c) <= 0):
                raise InvalidArgumentError("mu_cov: must be symmetric positive definite")
        if not self.tau2_shape > 1:
            raise InvalidArgumentError(f"tau2_shape: must exceed 1, got {self.tau2_shape}")
        if not self.tau2_rate > 0:
            raise InvalidArgumentError(f"tau2_rate: must be positive, got {self.tau2_rate}")
        if not 0 < self.phi_lo < self.phi_hi:
            raise InvalidArgumentError(
                f"phi_lo/phi_hi: need 0 < phi_lo < phi_hi, got {self.phi_lo}, {self.phi_hi}"
            )

    @property
    def tau2_mean(self) -> float:
        return self.tau2_rate / (self.tau2_shape - 1.0)

    @property
    def phi_mid(self) -> float:
        return 0.5 * (self.phi_lo + self.phi_hi)

    @property
    def mu_precision(self) -> np.ndarray:
        """Prior precision of ``mu``; zero for a flat (infinite covariance) prior."""
        c = np.asarray(self.mu_cov, dtype=float)
        if not np.all(np.isfinite(c)):
            return np.zeros((2, 2))
        return np.linalg.inv(c)


def stack_embedding(x, r) -> np.ndarray:
    """Interleave ``(r_i cos x_i, r_i sin x_i)`` in site order."""
    x = np.asarray(x, dtype=float).ravel()
    r = np.asarray(r, dtype=float).ravel()
    if x.shape != r.shape:
        raise InvalidArgumentError("x and r differ in length")
    if np.any(r <= 0):
        raise InvalidArgumentError("radii must be positive")
    out = np.empty(2 * x.size)
    out[0::2] = r * np.cos(x)
    out[1::2] = r * np.sin(x)
    return out


def unstack_embedding(y) -> Tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`stack_embedding`."""
    y = np.asarray(y, dtype=float).reshape(-1, 2)
    x = np.array([atan2_star(s, c) for c, s in y])
    return x, np.hypot(y[:, 0], y[:, 1])


class KroneckerCovariance:
    """The matrix ``R kron T`` kept in factored form.

    Inverse, log-determinant and quadratic forms use the Kronecker
    identities instead of the dense ``2n x 2n`` matrix.
    """

    def __init__(self, R: np.ndarray, T: np.ndarray, R_factor: Optional[CovarianceFactor] = None):
        T = np.asarray(T, dtype=float)
        if T.shape != (2, 2) or not np.allclose(T, T.T):
            raise InvalidArgumentError("T must be a symmetric 2x2 matrix")
        if T[0, 0] <= 0 or np.linalg.det(T) <= 0:
            raise InvalidArgumentError("T must be positive definite")
        self.R = np.asarray(R, dtype=float)
        self.T = T
        self.R_factor = R_factor if R_factor is not None else factorize(self.R)
        self.T_factor = factorize(T)

    @property
    def n(self) -> int:
        return self.R.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return np.kron(self.R, self.T)

    @property
    def logdet(self) -> float:
        return 2.0 * self.R_factor.logdet + self.n * self.T_factor.logdet

    def inverse(self) -> np.ndarray:
        return np.kron(self.R_factor.inverse(), self.T_factor.inverse())

    def quad_form(self, v) -> float:
        """``v' (R kron T)^{-1} v`` for a site-major stacked vector."""
        e = np.asarray(v, dtype=float).reshape(self.n, 2)
        w = self.R_factor.half_solve(e)
        s = w.T @ w
        return float(np.sum(self.T_factor.inverse() * s))

    def logpdf(self, v, mean) -> float:
        d = np.asarray(v, dtype=float) - np.asarray(mean, dtype=float)
        return -0.5 * (2 * self.n * LOG_2PI + self.logdet + self.quad_form(d))


def cross_cov(D: DistanceMatrix, phi: float, T) -> KroneckerCovariance:
    return KroneckerCovariance(corr_matrix(D, phi), T)


def pgsp_loglik(x, r, params: PgspParams, D: DistanceMatrix) -> float:
    """Joint log density of directions and radii: the bivariate field
    density plus the polar Jacobian ``sum(log r)``."""
    y = stack_embedding(x, r)
    cov = cross_cov(D, params.phi, params.T)
    mean = np.tile(params.mu, D.n)
    return cov.logpdf(y, mean) + float(np.sum(np.log(r)))


def projected_normal_pdf(theta, mu, Sigma):
    """Density of the angle of a bivariate normal ``N(mu, Sigma)``."""
    theta = np.asarray(theta, dtype=float)
    mu = np.asarray(mu, dtype=float)
    S = np.asarray(Sigma, dtype=float)
    Sinv = np.linalg.inv(S)
    u = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    A = np.einsum("...i,ij,...j->...", u, Sinv, u)
    B = u @ (Sinv @ mu)
    C = float(mu @ Sinv @ mu)
    D = B / np.sqrt(A)
    # C >= D^2 by Cauchy-Schwarz, so the second exponent is never positive
    body = np.exp(-0.5 * C) + D * ndtr(D) * math.sqrt(TWO_PI) * np.exp(0.5 * (D * D - C))
    out = body / (TWO_PI * A * math.sqrt(np.linalg.det(S)))
    return float(out) if out.ndim == 0 else out


@dataclass
class _RCache:
    phi: float
    factor: CovarianceFactor
    inv: np.ndarray


@dataclass
class PgspState:
    params: PgspParams
    r: np.ndarray
    scales: Dict[str, AdaptiveScale] = field(default_factory=dict)
    _cache: Optional[_RCache] = field(default=None, repr=False)

    def corr(self, D: DistanceMatrix) -> _RCache:
        if self._cache is None or self._cache.phi != self.params.phi:
            factor = factorize(corr_matrix(D, self.params.phi))
            self._cache = _RCache(self.params.phi, factor, factor.inverse())
        return self._cache


def _radius_scales(n: int) -> List[str]:
    return [f"r[{i}]" for i in range(n)]


def update_r(state: PgspState, x, D: DistanceMatrix, priors: PgspPriors, scales, rng) -> np.ndarray:
    """Random-walk Metropolis on each ``log r_i`` in site order.

    ``scales`` maps ``"r[i]"`` to that site's :class:`AdaptiveScale`.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    names = _radius_scales(n)
    log_sd = np.array([scales[nm].log_sd for nm in names])
    z = rng.standard_normal(n)
    log_u = np.log(rng.random(n))
    cache = state.corr(D)
    p = state.params
    tinv = np.linalg.inv(p.T)
    r, acc = radius_sweep(x, np.asarray(state.r, dtype=float), p.mu[0], p.mu[1], tinv, cache.inv,
                          log_sd, z, log_u)
    for nm, a in zip(names, acc):
        sc = scales[nm]
        sc.proposed += 1
        sc.total_proposed += 1
        if a:
            sc.accepted += 1
            sc.total_accepted += 1
    return r


def _field_resid(state: PgspState, x) -> np.ndarray:
    return stack_embedding(x, state.r).reshape(-1, 2) - np.asarray(state.params.mu)


def update_mu_vec(state: PgspState, x, D: DistanceMatrix, priors: PgspPriors, rng) -> np.ndarray:
    """Conjugate bivariate normal draw of ``mu``."""
    cache = state.corr(D)
    y = stack_embedding(x, state.r).reshape(-1, 2)
    tinv = np.linalg.inv(state.params.T)
    ones_q = cache.inv.sum(axis=0)
    p0 = priors.mu_precision
    prec = p0 + float(ones_q.sum()) * tinv
    lin = p0 @ np.asarray(priors.mu_mean) + tinv @ (y.T @ ones_q)
    chol = np.linalg.cholesky(prec)
    mean = np.linalg.solve(prec, lin)
    noise = np.linalg.solve(chol.T, rng.standard_normal(2))
    return mean + noise


def _logit_map(u: float, lo: float, hi: float) -> Tuple[float, float]:
    log_jac = math.log(hi - lo) - 2.0 * math.log1p(math.exp(-abs(u))) - abs(u)
    return lo + (hi - lo) * float(expit(u)), log_jac


def _inv_logit_map(v: float, lo: float, hi: float) -> float:
    p = (v - lo) / (hi - lo)
    return math.log(p) - math.log1p(-p)


def _complete_loglik(s: np.ndarray, n: int, logdet_r: float, tau2: float, rho: float) -> float:
    """Field log density from the 2x2 scatter ``s = E' R^{-1} E``."""
    det_t = tau2 * (1.0 - rho * rho)
    if not det_t > 0:
        return -math.inf
    tau = math.sqrt(tau2)
    # tr(T^{-1} s) with T^{-1} = [[1, -rho tau], [-rho tau, tau2]] / det
    tr = (s[0, 0] - 2.0 * rho * tau * s[0, 1] + tau2 * s[1, 1]) / det_t
    return -0.5 * (2 * n * LOG_2PI + 2.0 * logdet_r + n * math.log(det_t) + tr)


def update_tau2_rho_phi(state: PgspState, x, D: DistanceMatrix, priors: PgspPriors, scales, rng):
    """Three adaptive random-walk steps: ``log tau2``, the logit of
    ``(rho + 1) / 2`` and the logit of ``phi`` over its support."""
    e = _field_resid(state, x)
    n = e.shape[0]
    cache = state.corr(D)
    w = cache.factor.half_solve(e)
    s = w.T @ w
    logdet_r = cache.factor.logdet
    p = state.params
    tau2, rho, phi = p.tau2, p.rho, p.phi
    a, b = priors.tau2_shape, priors.tau2_rate

    def lt_tau2(v: float) -> float:
        t2 = math.exp(v)
        # inverse gamma prior times the log-scale Jacobian
        return _complete_loglik(s, n, logdet_r, t2, rho) - a * v - b / t2

    step = rw_metropolis_step(math.log(tau2), lt_tau2, scales["tau2"], rng)
    tau2 = math.exp(step.value)

    def lt_rho(v: float) -> float:
        rh, log_jac = _logit_map(v, -1.0, 1.0)
        if not -1.0 < rh < 1.0:
            return -math.inf
        return _complete_loglik(s, n, logdet_r, tau2, rh) + log_jac

    step = rw_metropolis_step(_inv_logit_map(rho, -1.0, 1.0), lt_rho, scales["rho"], rng)
    rho, _ = _logit_map(step.value, -1.0, 1.0)

    lo, hi = priors.phi_lo, priors.phi_hi
    factors: Dict[float, Tuple[CovarianceFactor, np.ndarray]] = {}

    def lt_phi(v: float) -> float:
        ph, log_jac = _logit_map(v, lo, hi)
        if not lo < ph < hi:
            return -math.inf
        try:
            factor = factorize(corr_matrix(D, ph))
        except FactorizationError:
            return -math.inf
        ww = factor.half_solve(e)
        ss = ww.T @ ww
        factors[v] = factor
        return _complete_loglik(ss, n, factor.logdet, tau2, rho) + log_jac

    v0 = _inv_logit_map(phi, lo, hi)
    _, jac0 = _logit_map(v0, lo, hi)
    step = rw_metropolis_step(v0, lt_phi, scales["phi"], rng,
                              log_current=_complete_loglik(s, n, logdet_r, tau2, rho) + jac0)
    if step.accepted:
        phi, _ = _logit_map(step.value, lo, hi)
        factor = factors[step.value]
        state._cache = _RCache(phi, factor, factor.inverse())
    return tau2, rho, phi


def _log_prior(params: PgspParams, priors: PgspPriors) -> Dict[str, float]:
    a, b = priors.tau2_shape, priors.tau2_rate
    m = np.asarray(params.mu) - np.asarray(priors.mu_mean)
    return {
        "mu": float(-0.5 * m @ priors.mu_precision @ m),
        "tau2": -(a + 1) * math.log(params.tau2) - b / params.tau2,
        "rho": 0.0 if -1 < params.rho < 1 else -math.inf,
        "phi": 0.0 if priors.phi_lo < params.phi < priors.phi_hi else -math.inf,
    }


class PgspKernel(Kernel):
    """Gibbs sweep ``r -> mu -> (tau2, rho, phi)``."""

    def __init__(self, x, D: DistanceMatrix, priors: PgspPriors, init: Optional[PgspParams] = None):
        self.x = np.asarray(x, dtype=float)
        self.D = D
        self.priors = priors
        self.init = init

    def initial_state(self, rng) -> PgspState:
        if self.init is not None:
            params = self.init
        else:
            c, s = float(np.mean(np.cos(self.x))), float(np.mean(np.sin(self.x)))
            norm = math.hypot(c, s)
            mu = (c / norm, s / norm) if norm > 1e-12 else (0.0, 1.0)
            params = PgspParams(mu=mu, tau2=1.0, rho=0.0, phi=self.priors.phi_mid)
        scales = {name: AdaptiveScale() for name in ("tau2", "rho", "phi")}
        scales.update({name: AdaptiveScale() for name in _radius_scales(self.x.size)})
        return PgspState(params=params, r=np.ones(self.x.size), scales=scales)

    def log_posterior_terms(self, state: PgspState) -> Dict[str, float]:
        terms = _log_prior(state.params, self.priors)
        try:
            terms["r"] = pgsp_loglik(self.x, state.r, state.params, self.D)
        except FactorizationError:
            terms["phi"] = -math.inf
        return terms

    def sweep(self, state: PgspState, rng) -> PgspState:
        x, D, priors = self.x, self.D, self.priors
        state.r = update_r(state, x, D, priors, state.scales, rng)
        mu = update_mu_vec(state, x, D, priors, rng)
        p = state.params
        state.params = PgspParams(mu, p.tau2, p.rho, p.phi)
        tau2, rho, phi = update_tau2_rho_phi(state, x, D, priors, state.scales, rng)
        state.params = PgspParams(state.params.mu, tau2, rho, phi)
        return state

    def record(self, state: PgspState) -> Dict[str, np.ndarray]:
        p = state.params
        return {"mu": np.array(p.mu), "tau2": p.tau2, "rho": p.rho, "phi": p.phi, "r": state.r}


@dataclass
class PgspPosterior:
    chains: List[ChainOutput]
    site_ids: Tuple[str, ...]
    coords: np.ndarray
    x: np.ndarray
    priors: PgspPriors
    config: ChainConfig

    model = "projected"
    scalar_params = ("mu1", "mu2", "tau2", "rho", "phi")

    def draws(self, name: str) -> np.ndarray:
        if name in ("mu1", "mu2"):
            return self.draws("mu")[:, int(name[-1]) - 1]
        if name == "mu_dir":
            mu = self.draws("mu")
            return wrap(np.arctan2(mu[:, 1], mu[:, 0]))
        return np.concatenate([c.draws[name] for c in self.chains], axis=0)

    @property
    def n_draws(self) -> int:
        return sum(c.n_draws for c in self.chains)

    def psrf(self) -> Dict[str, float]:
        if len(self.chains) < 2:
            return {}
        out = {}
        for i, name in enumerate(("mu1", "mu2")):
            out[name] = psrf(np.stack([c.draws["mu"][:, i] for c in self.chains]))
        for name in ("tau2", "rho", "phi"):
            out[name] = psrf(np.stack([c.draws[name] for c in self.chains]))
        return out

    def acceptance(self) -> Dict[str, List[float]]:
        return {name: [c.acceptance[name] for c in self.chains] for name in self.chains[0].acceptance}

    def credible_intervals(self, level: float = 0.95) -> Dict[str, Tuple[float, float]]:
        tail = 50.0 * (1.0 - level)
        out = {}
        for name in self.scalar_params:
            lo, hi = np.percentile(self.draws(name), [tail, 100.0 - tail])
            out[name] = (float(lo), float(hi))
        return out

    def mean_direction(self) -> float:
        """Direction of the posterior mean of ``mu``."""
        m = self.draws("mu").mean(axis=0)
        return atan2_star(m[1], m[0])


def fit_pgsp(
    data: SiteTable,
    priors: PgspPriors = PgspPriors(),
    cfg: ChainConfig = ChainConfig(),
    n_jobs: int = 1,
) -> PgspPosterior:
    """Fit the projected Gaussian spatial process by MCMC."""
    if len(data) < 5:
        raise InvalidArgumentError(f"need at least 5 sites to fit, got {len(data)}")
    D = distance_matrix(data.coords)
    chains = run_chains(PgspKernel(data.direction, D, priors), cfg, n_jobs=n_jobs)
    return PgspPosterior(
        chains=chains,
        site_ids=data.site_id,
        coords=data.coords,
        x=np.asarray(data.direction),
        priors=priors,
        config=cfg,
    )


def simulate_pgsp(coords, params: PgspParams, rng, site_ids=None) -> Tuple[SiteTable, np.ndarray]:
    """Simulate projected directions; also returns the latent field as ``(n, 2)``."""
    D = distance_matrix(coords)
    L = np.kron(factorize(corr_matrix(D, params.phi)).lower, np.linalg.cholesky(params.T))
    y = (np.tile(params.mu, D.n) + L @ rng.standard_normal(2 * D.n)).reshape(-1, 2)
    x = wrap(np.arctan2(y[:, 1], y[:, 0]))
    coords = np.asarray(coords, dtype=float)
    ids = site_ids if site_ids is not None else [f"s{i:03d}" for i in range(D.n)]
    table = SiteTable(site_id=tuple(ids), easting=coords[:, 0], northing=coords[:, 1], direction=x)
    return table, y
