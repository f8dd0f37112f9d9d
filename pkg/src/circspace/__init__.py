"""Bayesian spatial models for circular data.

Two geostatistical models for directions observed at planar sites: a
wrapped Gaussian process and a projected Gaussian process, both fitted by
adaptive Metropolis-within-Gibbs and used to krige directions at new
sites.
"""

from .circular import (
    TWO_PI,
    CircularSummary,
    atan2_star,
    circ_dist,
    circ_mean,
    circ_median,
    circ_resultant,
    describe,
    rose_histogram,
    std_from_variance,
    wrap,
)
from .estimators import ProjectedSpatialModel, WrappedSpatialModel
from .evaluation import EvalReport, ape, crps_circ, holdout_split
from .exceptions import (
    CircSpaceError,
    ConfigError,
    EmptyInputError,
    FactorizationError,
    IngestionError,
    InitializationError,
    InvalidArgumentError,
    UndefinedDirectionError,
)
from .kriging import KrigResult, proj_krig, wrap_krig
from .mcmc import ChainConfig, psrf, run_chains
from .projected import PgspParams, PgspPosterior, PgspPriors, fit_pgsp, simulate_pgsp
from .spatial import SiteTable
from .wrapped import WgspParams, WgspPosterior, WgspPriors, fit_wgsp, simulate_wgsp

__version__ = "0.1.0"

__all__ = [
    "TWO_PI",
    "CircularSummary",
    "atan2_star",
    "circ_dist",
    "circ_mean",
    "circ_median",
    "circ_resultant",
    "describe",
    "rose_histogram",
    "std_from_variance",
    "wrap",
    "ProjectedSpatialModel",
    "WrappedSpatialModel",
    "EvalReport",
    "ape",
    "crps_circ",
    "holdout_split",
    "CircSpaceError",
    "ConfigError",
    "EmptyInputError",
    "FactorizationError",
    "IngestionError",
    "InitializationError",
    "InvalidArgumentError",
    "UndefinedDirectionError",
    "KrigResult",
    "proj_krig",
    "wrap_krig",
    "ChainConfig",
    "psrf",
    "run_chains",
    "PgspParams",
    "PgspPosterior",
    "PgspPriors",
    "fit_pgsp",
    "simulate_pgsp",
    "SiteTable",
    "WgspParams",
    "WgspPosterior",
    "WgspPriors",
    "fit_wgsp",
    "simulate_wgsp",
]
