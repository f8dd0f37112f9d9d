"""scikit-learn style estimators wrapping the two spatial models.

``X`` holds planar site coordinates in km, shape ``(n, 2)``; ``y`` holds
observed directions in radians. ``predict`` returns kriged directions.
"""

from __future__ import annotations

from typing import List, Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .circular import wrap
from .evaluation import ape
from .kriging import KrigResult, proj_krig, wrap_krig
from .mcmc import ChainConfig
from .projected import PgspPriors, fit_pgsp
from .spatial import SiteTable
from .wrapped import WgspPriors, fit_wgsp

_CHAIN_DEFAULTS = ChainConfig()


class _SpatialDirectionModel(BaseEstimator):
    """Shared fit/predict plumbing; subclasses supply priors and the fitter."""

    _fit_fn = None
    _krig_fn = None

    def _priors(self):
        raise NotImplementedError

    def _chain_config(self) -> ChainConfig:
        seed = self.random_state
        if seed is None:
            seed = int(np.random.default_rng().integers(2**31 - 1))
        return ChainConfig(
            n_iter=self.n_iter,
            burnin=self.burnin,
            thin=self.thin,
            n_chains=self.n_chains,
            target_accept=self.target_accept,
            adapt_start=self.adapt_start,
            adapt_end=self.adapt_end,
            seed=seed,
        )

    def fit(self, X, y, site_ids=None):
        """Run the sampler on directions ``y`` observed at coordinates ``X``.

        Parameters
        ----------
        X : array of shape (n_sites, 2)
            Easting and northing in km.
        y : array of shape (n_sites,)
            Directions in radians.
        site_ids : sequence of str, optional
            Labels for the sites; defaults to ``"0", "1", ...``.

        Returns
        -------
        self
        """
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if X.shape[1] != 2:
            raise ValueError(f"X must have 2 columns (easting, northing), got {X.shape[1]}")
        ids = tuple(str(i) for i in range(len(y))) if site_ids is None else tuple(site_ids)
        table = SiteTable(site_id=ids, easting=X[:, 0], northing=X[:, 1], direction=wrap(y))
        fit = type(self)._fit_fn
        self.posterior_ = fit(table, self._priors(), self._chain_config(), n_jobs=self.n_jobs)
        self.n_features_in_ = 2
        return self

    def krig(self, X) -> List[KrigResult]:
        """Full kriging output (direction, concentration, draws) per row of ``X``."""
        check_is_fitted(self, "posterior_")
        X = check_array(X, dtype=np.float64, ensure_min_samples=0)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, expected {self.n_features_in_}")
        krig = type(self)._krig_fn
        return krig(self.posterior_, None, X, seed=self.krig_seed)

    def predict(self, X) -> np.ndarray:
        """Posterior mean kriged directions in ``[0, 2*pi)``."""
        return np.array([r.direction for r in self.krig(X)])

    def predict_concentration(self, X) -> np.ndarray:
        return np.array([r.concentration for r in self.krig(X)])

    def score(self, X, y) -> float:
        """Negative average prediction error (``1 - cos``), so larger is better."""
        return -ape(self.predict(X), np.asarray(y, dtype=float))


class WrappedSpatialModel(_SpatialDirectionModel):
    """Wrapped Gaussian spatial process.

    Parameters
    ----------
    mu_mean, mu_var
        Wrapped normal prior on the mean direction.
    sigma2_shape, sigma2_rate
        Inverse gamma prior on the variance.
    phi_lo, phi_hi
        Uniform prior bounds on the decay (per km).
    k_max
        Winding numbers are restricted to ``-k_max .. k_max``.
    n_iter, burnin, thin, n_chains, target_accept, adapt_start, adapt_end
        Sampler schedule, see :class:`circspace.mcmc.ChainConfig`.
    random_state
        Seed of the first chain; chain ``c`` uses ``random_state + c``.
    n_jobs
        Chains run in parallel processes when not 1.
    krig_seed
        Seed for predictive draws.

    Examples
    --------
    >>> model = WrappedSpatialModel(n_iter=2000, burnin=500, adapt_end=500)
    >>> model.fit(coords, directions).predict(new_coords)  # doctest: +SKIP
    """

    _fit_fn = staticmethod(fit_wgsp)
    _krig_fn = staticmethod(wrap_krig)

    def __init__(
        self,
        mu_mean: float = 0.0,
        mu_var: float = 2.0,
        sigma2_shape: float = 7.0,
        sigma2_rate: float = 0.5,
        phi_lo: float = 0.001,
        phi_hi: float = 0.9,
        k_max: int = 2,
        n_iter: int = _CHAIN_DEFAULTS.n_iter,
        burnin: int = _CHAIN_DEFAULTS.burnin,
        thin: int = _CHAIN_DEFAULTS.thin,
        n_chains: int = _CHAIN_DEFAULTS.n_chains,
        target_accept: float = _CHAIN_DEFAULTS.target_accept,
        adapt_start: int = _CHAIN_DEFAULTS.adapt_start,
        adapt_end: int = _CHAIN_DEFAULTS.adapt_end,
        random_state: Optional[int] = 0,
        n_jobs: int = 1,
        krig_seed: int = 0,
    ):
        self.mu_mean = mu_mean
        self.mu_var = mu_var
        self.sigma2_shape = sigma2_shape
        self.sigma2_rate = sigma2_rate
        self.phi_lo = phi_lo
        self.phi_hi = phi_hi
        self.k_max = k_max
        self.n_iter = n_iter
        self.burnin = burnin
        self.thin = thin
        self.n_chains = n_chains
        self.target_accept = target_accept
        self.adapt_start = adapt_start
        self.adapt_end = adapt_end
        self.random_state = random_state
        self.n_jobs = n_jobs
        self.krig_seed = krig_seed

    def _priors(self) -> WgspPriors:
        return WgspPriors(
            mu_mean=self.mu_mean,
            mu_var=self.mu_var,
            sigma2_shape=self.sigma2_shape,
            sigma2_rate=self.sigma2_rate,
            phi_lo=self.phi_lo,
            phi_hi=self.phi_hi,
            k_max=self.k_max,
        )


class ProjectedSpatialModel(_SpatialDirectionModel):
    """Projected Gaussian spatial process.

    Parameters
    ----------
    mu_mean, mu_cov
        Bivariate normal prior on the mean vector.
    tau2_shape, tau2_rate
        Inverse gamma prior on the first-component variance.
    phi_lo, phi_hi
        Uniform prior bounds on the decay (per km).

    The remaining parameters are as for :class:`WrappedSpatialModel`.
    """

    _fit_fn = staticmethod(fit_pgsp)
    _krig_fn = staticmethod(proj_krig)

    def __init__(
        self,
        mu_mean=(0.0, 1.0),
        mu_cov=((10.0, 0.0), (0.0, 10.0)),
        tau2_shape: float = 7.0,
        tau2_rate: float = 6.0,
        phi_lo: float = 0.001,
        phi_hi: float = 0.9,
        n_iter: int = _CHAIN_DEFAULTS.n_iter,
        burnin: int = _CHAIN_DEFAULTS.burnin,
        thin: int = _CHAIN_DEFAULTS.thin,
        n_chains: int = _CHAIN_DEFAULTS.n_chains,
        target_accept: float = _CHAIN_DEFAULTS.target_accept,
        adapt_start: int = _CHAIN_DEFAULTS.adapt_start,
        adapt_end: int = _CHAIN_DEFAULTS.adapt_end,
        random_state: Optional[int] = 0,
        n_jobs: int = 1,
        krig_seed: int = 0,
    ):
        self.mu_mean = mu_mean
        self.mu_cov = mu_cov
        self.tau2_shape = tau2_shape
        self.tau2_rate = tau2_rate
        self.phi_lo = phi_lo
        self.phi_hi = phi_hi
        self.n_iter = n_iter
        self.burnin = burnin
        self.thin = thin
        self.n_chains = n_chains
        self.target_accept = target_accept
        self.adapt_start = adapt_start
        self.adapt_end = adapt_end
        self.random_state = random_state
        self.n_jobs = n_jobs
        self.krig_seed = krig_seed

    def _priors(self) -> PgspPriors:
        return PgspPriors(
            mu_mean=tuple(self.mu_mean),
            mu_cov=tuple(tuple(row) for row in np.asarray(self.mu_cov, dtype=float).tolist()),
            tau2_shape=self.tau2_shape,
            tau2_rate=self.tau2_rate,
            phi_lo=self.phi_lo,
            phi_hi=self.phi_hi,
        )
