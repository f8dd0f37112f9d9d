"""Wrapped Gaussian spatial process.

Observed directions ``x`` are the latent Gaussian field ``y = x + 2 pi k``
reduced modulo ``2 pi``. The field has a constant mean ``mu`` and
covariance ``sigma2 * exp(-phi * d)``. The integer winding numbers ``k``
are latent and sampled alongside the parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit, log_ndtr, logsumexp, ndtri_exp

from .circular import TWO_PI, circ_mean, circ_resultant, wrap
from ._kernels import winding_sweep
from .exceptions import FactorizationError, InvalidArgumentError
from .mcmc import (
    AdaptiveScale,
    ChainConfig,
    ChainOutput,
    Kernel,
    psrf,
    run_chains,
    rw_metropolis_step,
)
from .spatial import (
    LOG_2PI,
    CovarianceFactor,
    DistanceMatrix,
    SiteTable,
    corr_matrix,
    distance_matrix,
    factorize,
    mvn_sample,
)


@dataclass(frozen=True)
class WgspParams:
    mu: float
    sigma2: float
    phi: float

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise InvalidArgumentError(f"sigma2 must be positive, got {self.sigma2}")
        if not self.phi > 0:
            raise InvalidArgumentError(f"phi must be positive, got {self.phi}")
        object.__setattr__(self, "mu", wrap(self.mu))


@dataclass(frozen=True)
class WgspPriors:
    """Priors: wrapped normal on ``mu``, inverse gamma on ``sigma2``,
    uniform on ``phi``. ``k_max`` truncates the winding numbers."""

    mu_mean: float = 0.0
    mu_var: float = 2.0
    sigma2_shape: float = 7.0
    sigma2_rate: float = 0.5
    phi_lo: float = 0.001
    phi_hi: float = 0.9
    k_max: int = 2

    def __post_init__(self):
        if not self.mu_var > 0:
            raise InvalidArgumentError(f"mu_var: must be positive, got {self.mu_var}")
        if not self.sigma2_shape > 1:
            raise InvalidArgumentError(f"sigma2_shape: must exceed 1, got {self.sigma2_shape}")
        if not self.sigma2_rate > 0:
            raise InvalidArgumentError(f"sigma2_rate: must be positive, got {self.sigma2_rate}")
        if not 0 < self.phi_lo < self.phi_hi:
            raise InvalidArgumentError(
                f"phi_lo/phi_hi: need 0 < phi_lo < phi_hi, got {self.phi_lo}, {self.phi_hi}"
            )
        if int(self.k_max) != self.k_max or self.k_max < 1:
            raise InvalidArgumentError(f"k_max: must be an integer >= 1, got {self.k_max}")
        object.__setattr__(self, "k_max", int(self.k_max))

    @property
    def sigma2_mean(self) -> float:
        return self.sigma2_rate / (self.sigma2_shape - 1.0)

    @property
    def phi_mid(self) -> float:
        return 0.5 * (self.phi_lo + self.phi_hi)


@dataclass
class _CorrCache:
    phi: float
    factor: CovarianceFactor
    inv: np.ndarray


@dataclass
class WgspState:
    params: WgspParams
    k: np.ndarray
    scales: Dict[str, AdaptiveScale] = field(default_factory=dict)
    diagnostics: Dict[str, int] = field(default_factory=dict)
    _cache: Optional[_CorrCache] = field(default=None, repr=False)

    def corr(self, D: DistanceMatrix) -> _CorrCache:
        """Factor and inverse of the correlation matrix at the current ``phi``."""
        if self._cache is None or self._cache.phi != self.params.phi:
            self._cache = _corr_cache(D, self.params.phi)
        return self._cache


def _corr_cache(D: DistanceMatrix, phi: float) -> _CorrCache:
    factor = factorize(corr_matrix(D, phi))
    return _CorrCache(phi=phi, factor=factor, inv=factor.inverse())


def wrapped_normal_logpdf(x, mu: float, sigma2: float, k_max: int = 20):
    """Log density of the wrapped normal, truncating the wrap sum at ``|k| <= k_max``."""
    if not sigma2 > 0:
        raise InvalidArgumentError(f"sigma2 must be positive, got {sigma2}")
    if k_max < 0:
        raise InvalidArgumentError("k_max must be non-negative")
    x = np.asarray(x, dtype=float)
    ks = np.arange(-k_max, k_max + 1)
    z = x[..., None] + TWO_PI * ks - mu
    terms = -0.5 * z * z / sigma2 - 0.5 * (LOG_2PI + math.log(sigma2))
    out = logsumexp(terms, axis=-1)
    return float(out) if out.ndim == 0 else out


def wgsp_loglik(x, k, params: WgspParams, D: DistanceMatrix) -> float:
    """Complete-data log likelihood of the unwrapped field ``x + 2 pi k``."""
    x = np.asarray(x, dtype=float)
    k = np.asarray(k)
    if x.shape != k.shape or x.size != D.n:
        raise InvalidArgumentError("x, k and the distance matrix disagree in size")
    factor = factorize(corr_matrix(D, params.phi))
    return _loglik_given_factor(x + TWO_PI * k - params.mu, params.sigma2, factor)


def _loglik_given_factor(resid: np.ndarray, sigma2: float, factor: CovarianceFactor) -> float:
    w = factor.half_solve(resid)
    n = resid.size
    return -0.5 * (n * (LOG_2PI + math.log(sigma2)) + factor.logdet + float(w @ w) / sigma2)


def mu_full_conditional(y, corr_inv: np.ndarray, sigma2: float, mu_mean: float, mu_var: float):
    """Gaussian conditional of an unwrapped constant mean given the field.

    Uses a normal prior ``N(mu_mean, mu_var)``; ``mu_var=inf`` is flat.
    Returns ``(mean, variance)``.
    """
    y = np.asarray(y, dtype=float)
    ones_q = corr_inv.sum(axis=0)
    lik_prec = float(ones_q.sum()) / sigma2
    lik_lin = float(ones_q @ y) / sigma2
    prior_prec = 0.0 if np.isinf(mu_var) else 1.0 / mu_var
    prec = prior_prec + lik_prec
    return (prior_prec * mu_mean + lik_lin) / prec, 1.0 / prec


def _log_mass(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``log(Phi(b) - Phi(a))`` for ``a < b``, accurate in both tails."""
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    log_hi = log_ndtr(hi)
    log_lo = log_ndtr(lo)
    with np.errstate(divide="ignore"):
        return log_hi + np.log1p(-np.exp(log_lo - log_hi))


def _truncnorm_draw(mean: float, sd: float, lo: float, hi: float, u: float) -> float:
    a, b = (lo - mean) / sd, (hi - mean) / sd
    sign = 1.0
    if a > 0:
        a, b, sign = -b, -a, -1.0
    log_a, log_b = log_ndtr(a), log_ndtr(b)
    # inverse cdf on the lower side, in log space
    log_p = log_b + math.log(u + (1.0 - u) * math.exp(log_a - log_b))
    z = float(ndtri_exp(log_p))
    z = min(max(z, a), b)
    return min(max(mean + sign * sd * z, lo), math.nextafter(hi, lo))


def _wrapped_mu_draw(
    m_lik: float, v_lik: float, priors: WgspPriors, j_range: Tuple[int, int], rng
) -> Tuple[float, int]:
    """Draw an unwrapped mean whose wrapped-normal prior and Gaussian
    likelihood are combined, restricted to the allowed ``2 pi`` windows.

    Returns the unwrapped draw and the index ``j`` of its window.
    """
    js = np.arange(j_range[0], j_range[1] + 1)
    if np.isinf(priors.mu_var):
        centers = np.array([m_lik])
        post_var = v_lik
        log_c = np.zeros(1)
    else:
        v0 = priors.mu_var
        s = math.sqrt(v0 + v_lik)
        base = math.floor((m_lik - priors.mu_mean) / TWO_PI)
        span = int(math.ceil(12.0 * s / TWO_PI)) + 1
        shifts = np.arange(base - span, base + span + 2)
        prior_centers = priors.mu_mean + TWO_PI * shifts
        post_var = 1.0 / (1.0 / v0 + 1.0 / v_lik)
        centers = post_var * (prior_centers / v0 + m_lik / v_lik)
        log_c = -0.5 * (m_lik - prior_centers) ** 2 / (v0 + v_lik)
    sd = math.sqrt(post_var)
    lo = TWO_PI * js
    a = (lo[None, :] - centers[:, None]) / sd
    b = (lo[None, :] + TWO_PI - centers[:, None]) / sd
    logw = log_c[:, None] + _log_mass(a, b)
    flat = logw.ravel()
    p = np.exp(flat - flat.max())
    pick = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
    pick = min(pick, p.size - 1)
    ci, jj = divmod(pick, js.size)
    j = int(js[jj])
    mu_un = _truncnorm_draw(float(centers[ci]), sd, TWO_PI * j, TWO_PI * (j + 1), rng.random())
    return mu_un, j


def update_mu(state: WgspState, x, D: DistanceMatrix, priors: WgspPriors, rng):
    """Draw ``mu`` from its full conditional and relabel the winding numbers.

    The draw is exact for the wrapped-normal prior: it samples the
    unwrapped mean over every ``2 pi`` window compatible with
    ``|k| <= k_max``, then shifts ``k`` so the field ``x + 2 pi k - mu``
    is unchanged. Returns ``(mu, k)``.
    """
    cache = state.corr(D)
    k = np.asarray(state.k)
    y = np.asarray(x, dtype=float) + TWO_PI * k
    m_lik, v_lik = mu_full_conditional(y, cache.inv, state.params.sigma2, 0.0, np.inf)
    j_range = (int(k.max()) - priors.k_max, int(k.min()) + priors.k_max)
    mu_un, j = _wrapped_mu_draw(m_lik, v_lik, priors, j_range, rng)
    return wrap(mu_un - TWO_PI * j), k - j


def update_sigma2(state: WgspState, x, D: DistanceMatrix, priors: WgspPriors, rng) -> float:
    cache = state.corr(D)
    resid = np.asarray(x, dtype=float) + TWO_PI * np.asarray(state.k) - state.params.mu
    quad = float(resid @ cache.inv @ resid)
    shape = priors.sigma2_shape + 0.5 * resid.size
    rate = priors.sigma2_rate + 0.5 * quad
    return rate / rng.gamma(shape)


def _phi_to_u(phi: float, priors: WgspPriors) -> float:
    p = (phi - priors.phi_lo) / (priors.phi_hi - priors.phi_lo)
    return math.log(p) - math.log1p(-p)


def _u_to_phi(u: float, lo: float, hi: float) -> Tuple[float, float]:
    """Map the logit coordinate into ``(lo, hi)``; also return the log Jacobian."""
    s = float(expit(u))
    log_jac = math.log(hi - lo) - math.log1p(math.exp(-abs(u))) * 2.0 - abs(u)
    return lo + (hi - lo) * s, log_jac


def update_phi(
    state: WgspState,
    x,
    D: DistanceMatrix,
    priors: WgspPriors,
    scale: AdaptiveScale,
    rng,
) -> float:
    """Random-walk step for ``phi`` on the logit scale of its support."""
    resid = np.asarray(x, dtype=float) + TWO_PI * np.asarray(state.k) - state.params.mu
    sigma2 = state.params.sigma2
    lo, hi = priors.phi_lo, priors.phi_hi
    factors: Dict[float, CovarianceFactor] = {}

    def log_target(u: float) -> float:
        phi, log_jac = _u_to_phi(u, lo, hi)
        if not lo < phi < hi:
            return -math.inf
        try:
            factor = factorize(corr_matrix(D, phi))
        except FactorizationError:
            return -math.inf
        factors[u] = factor
        return _loglik_given_factor(resid, sigma2, factor) + log_jac

    u0 = _phi_to_u(state.params.phi, priors)
    cache = state.corr(D)
    _, jac0 = _u_to_phi(u0, lo, hi)
    log0 = _loglik_given_factor(resid, sigma2, cache.factor) + jac0
    step = rw_metropolis_step(u0, log_target, scale, rng, log_current=log0)
    if not step.accepted:
        return state.params.phi
    phi, _ = _u_to_phi(step.value, lo, hi)
    factor = factors[step.value]
    state._cache = _CorrCache(phi=phi, factor=factor, inv=factor.inverse())
    return phi


def update_k(state: WgspState, x, D: DistanceMatrix, priors: WgspPriors, rng) -> np.ndarray:
    """Site-by-site Gibbs draw of the winding numbers.

    Each ``k_i`` is drawn from ``{-k_max, ..., k_max}`` with
    probabilities proportional to the conditional normal density of
    ``x_i + 2 pi k_i`` given the rest of the field.
    """
    cache = state.corr(D)
    x = np.asarray(x, dtype=float)
    u = rng.random(x.size)
    k, n_bad = winding_sweep(
        x, np.asarray(state.k, dtype=np.int64), state.params.mu, state.params.sigma2,
        cache.inv, priors.k_max, u,
    )
    if n_bad:
        state.diagnostics["k_underflow"] = state.diagnostics.get("k_underflow", 0) + int(n_bad)
    return k


# sites whose correlation reaches this level are shifted together
CLUSTER_CORR = 0.9


def shift_k_clusters(state: WgspState, x, D: DistanceMatrix, priors: WgspPriors, rng) -> np.ndarray:
    """Metropolis move adding a common +1 or -1 to the winding numbers of
    strongly correlated neighbours.

    Single-site updates cannot relabel two nearly coincident sites, since
    changing one of them alone is vanishingly unlikely. For each site with
    neighbours at correlation >= ``CLUSTER_CORR`` the whole group is
    shifted by a symmetric random step. Groups depend only on ``phi`` so
    the proposal is symmetric and the target is preserved. No random
    numbers are used when no such group exists.
    """
    k = np.array(state.k, dtype=np.int64)
    radius = -math.log(CLUSTER_CORR) / state.params.phi
    near = D.d <= radius
    groups = [np.flatnonzero(row) for row in near]
    active = [i for i, g in enumerate(groups) if g.size > 1]
    if not active:
        return k
    cache = state.corr(D)
    Q = cache.inv
    sigma2 = state.params.sigma2
    Qr = Q @ (np.asarray(x, dtype=float) + TWO_PI * k - state.params.mu)
    u = rng.random((len(active), 2))
    n_acc = 0
    for (i, (u_dir, u_acc)) in zip(active, u):
        g = groups[i]
        step = 1 if u_dir < 0.5 else -1
        if np.any(np.abs(k[g] + step) > priors.k_max):
            continue
        delta = TWO_PI * step
        Qd = delta * Q[:, g].sum(axis=1)
        log_ratio = -(delta * Qr[g].sum() + 0.5 * delta * Qd[g].sum()) / sigma2
        if log_ratio >= 0 or u_acc < math.exp(log_ratio):
            k[g] += step
            Qr += Qd
            n_acc += 1
    d = state.diagnostics
    d["cluster_proposed"] = d.get("cluster_proposed", 0) + len(active)
    d["cluster_accepted"] = d.get("cluster_accepted", 0) + n_acc
    return k


def _log_prior(params: WgspParams, priors: WgspPriors) -> Dict[str, float]:
    a, b = priors.sigma2_shape, priors.sigma2_rate
    in_support = priors.phi_lo < params.phi < priors.phi_hi
    return {
        "mu": wrapped_normal_logpdf(params.mu, priors.mu_mean, priors.mu_var),
        "sigma2": a * math.log(b) - math.lgamma(a) - (a + 1) * math.log(params.sigma2)
        - b / params.sigma2,
        "phi": -math.log(priors.phi_hi - priors.phi_lo) if in_support else -math.inf,
    }


class WgspKernel(Kernel):
    """Gibbs sweep ``k -> mu -> sigma2 -> phi`` for one data set."""

    def __init__(self, x, D: DistanceMatrix, priors: WgspPriors, init: Optional[WgspParams] = None,
                 fixed: Tuple[str, ...] = ()):
        self.x = np.asarray(x, dtype=float)
        self.D = D
        self.priors = priors
        self.init = init
        self.fixed = frozenset(fixed)

    def initial_state(self, rng) -> WgspState:
        if self.init is not None:
            params = self.init
        else:
            mu = circ_mean(self.x) if circ_resultant(self.x) > 1e-12 else 0.0
            params = WgspParams(mu=mu, sigma2=self.priors.sigma2_mean, phi=self.priors.phi_mid)
        return WgspState(
            params=params,
            k=np.zeros(self.x.size, dtype=int),
            scales={} if "phi" in self.fixed else {"phi": AdaptiveScale()},
        )

    def log_posterior_terms(self, state: WgspState) -> Dict[str, float]:
        terms = _log_prior(state.params, self.priors)
        try:
            terms["k"] = wgsp_loglik(self.x, state.k, state.params, self.D)
        except FactorizationError:
            terms["phi"] = -math.inf
        return terms

    def sweep(self, state: WgspState, rng) -> WgspState:
        x, D, priors = self.x, self.D, self.priors
        if "k" not in self.fixed:
            state.k = update_k(state, x, D, priors, rng)
            state.k = shift_k_clusters(state, x, D, priors, rng)
        if "mu" not in self.fixed:
            mu, state.k = update_mu(state, x, D, priors, rng)
            state.params = WgspParams(mu, state.params.sigma2, state.params.phi)
        if "sigma2" not in self.fixed:
            sigma2 = update_sigma2(state, x, D, priors, rng)
            state.params = WgspParams(state.params.mu, sigma2, state.params.phi)
        if "phi" not in self.fixed:
            phi = update_phi(state, x, D, priors, state.scales["phi"], rng)
            state.params = WgspParams(state.params.mu, state.params.sigma2, phi)
        return state

    def record(self, state: WgspState) -> Dict[str, np.ndarray]:
        p = state.params
        return {"mu": p.mu, "sigma2": p.sigma2, "phi": p.phi, "k": state.k}


@dataclass
class WgspPosterior:
    """Retained draws of a wrapped-model fit, one :class:`ChainOutput` per chain."""

    chains: List[ChainOutput]
    site_ids: Tuple[str, ...]
    coords: np.ndarray
    x: np.ndarray
    priors: WgspPriors
    config: ChainConfig

    model = "wrapped"
    scalar_params = ("mu", "sigma2", "phi")

    def draws(self, name: str) -> np.ndarray:
        """Draws of ``name`` with all chains concatenated in chain order."""
        return np.concatenate([c.draws[name] for c in self.chains], axis=0)

    @property
    def n_draws(self) -> int:
        return sum(c.n_draws for c in self.chains)

    def psrf(self) -> Dict[str, float]:
        """PSRF per monitored quantity; ``mu`` is monitored through its
        cosine and sine."""
        if len(self.chains) < 2:
            return {}
        mu = np.stack([c.draws["mu"] for c in self.chains])
        out = {"cos_mu": psrf(np.cos(mu)), "sin_mu": psrf(np.sin(mu))}
        for name in ("sigma2", "phi"):
            out[name] = psrf(np.stack([c.draws[name] for c in self.chains]))
        return out

    def acceptance(self) -> Dict[str, List[float]]:
        return {name: [c.acceptance[name] for c in self.chains] for name in self.chains[0].acceptance}

    def credible_intervals(self, level: float = 0.95) -> Dict[str, Tuple[float, float]]:
        """Equal-tailed intervals; the ``mu`` interval is centred on the
        circular mean and may straddle zero (lower bound negative)."""
        return _credible_intervals(self, level)


def _credible_intervals(post, level: float) -> Dict[str, Tuple[float, float]]:
    tail = 50.0 * (1.0 - level)
    out = {}
    for name in post.scalar_params:
        d = post.draws(name)
        if name == "mu":
            centre = circ_mean(d)
            dev = np.mod(d - centre + np.pi, TWO_PI) - np.pi
            lo, hi = np.percentile(dev, [tail, 100.0 - tail])
            out[name] = (centre + lo, centre + hi)
        else:
            lo, hi = np.percentile(d, [tail, 100.0 - tail])
            out[name] = (float(lo), float(hi))
    return out


def fit_wgsp(
    data: SiteTable,
    priors: WgspPriors = WgspPriors(),
    cfg: ChainConfig = ChainConfig(),
    n_jobs: int = 1,
) -> WgspPosterior:
    """Fit the wrapped Gaussian spatial process by MCMC."""
    if len(data) < 5:
        raise InvalidArgumentError(f"need at least 5 sites to fit, got {len(data)}")
    D = distance_matrix(data.coords)
    kernel = WgspKernel(data.direction, D, priors)
    chains = run_chains(kernel, cfg, n_jobs=n_jobs)
    return WgspPosterior(
        chains=chains,
        site_ids=data.site_id,
        coords=data.coords,
        x=np.asarray(data.direction),
        priors=priors,
        config=cfg,
    )


def simulate_wgsp(coords, params: WgspParams, rng, site_ids=None) -> Tuple[SiteTable, np.ndarray]:
    """Simulate wrapped directions; also returns the latent unwrapped field."""
    D = distance_matrix(coords)
    cov = params.sigma2 * corr_matrix(D, params.phi)
    y = mvn_sample(np.full(D.n, params.mu), factorize(cov), rng)
    coords = np.asarray(coords, dtype=float)
    ids = site_ids if site_ids is not None else [f"s{i:03d}" for i in range(D.n)]
    table = SiteTable(site_id=tuple(ids), easting=coords[:, 0], northing=coords[:, 1], direction=wrap(y))
    return table, y
