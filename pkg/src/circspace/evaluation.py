"""Holdout splits and circular predictive scores."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .circular import circ_dist
from .exceptions import InvalidArgumentError
from .spatial import SiteTable

#: pairwise CRPS terms are exact up to this many draws, subsampled beyond
MAX_PAIRWISE_DRAWS = 20_000


@dataclass
class SiteError:
    site_id: str
    truth: float
    predicted: float
    circ_error: float


@dataclass
class EvalReport:
    ape: float
    crps: float
    per_site: List[SiteError] = field(default_factory=list)
    model: str = ""
    split_seed: int = 0
    notes: List[str] = field(default_factory=list)


def holdout_split(data: SiteTable, n_valid: int, seed: int = 0) -> Tuple[SiteTable, SiteTable]:
    """Random train/validation split without replacement; site order is kept."""
    n = len(data)
    if not 0 < n_valid < n:
        raise InvalidArgumentError(f"n_valid must satisfy 0 < n_valid < {n}, got {n_valid}")
    rng = np.random.default_rng(seed)
    valid = np.sort(rng.choice(n, size=n_valid, replace=False))
    train = np.setdiff1d(np.arange(n), valid)
    return data.subset(train), data.subset(valid)


def ape(predicted, truth, kind: str = "cosine") -> float:
    """Average prediction error: mean circular distance."""
    p = np.atleast_1d(np.asarray(predicted, dtype=float))
    t = np.atleast_1d(np.asarray(truth, dtype=float))
    if p.shape != t.shape or p.size == 0:
        raise InvalidArgumentError(
            f"predicted and truth must be non-empty and equal length, got {p.size} and {t.size}"
        )
    return float(np.mean(circ_dist(p, t, kind=kind)))


def _site_crps(draws: np.ndarray, truth: float, kind: str, rng) -> Tuple[float, bool]:
    first = float(np.mean(circ_dist(draws, truth, kind=kind)))
    if kind == "cosine":
        # mean of 1 - cos(a - b) over all ordered pairs is 1 - Rbar^2
        c, s = np.mean(np.cos(draws)), np.mean(np.sin(draws))
        return first - 0.5 * (1.0 - (c * c + s * s)), False
    sub = draws
    subsampled = draws.size > MAX_PAIRWISE_DRAWS
    if subsampled:
        sub = rng.choice(draws, size=MAX_PAIRWISE_DRAWS, replace=False)
    spread = 0.0
    for chunk in np.array_split(sub, max(1, sub.size // 2000)):
        spread += float(np.sum(circ_dist(chunk[:, None], sub[None, :], kind=kind)))
    return first - 0.5 * spread / sub.size**2, subsampled


def crps_circ(predictive_draws: Sequence, truth, kind: str = "cosine", seed: int = 0) -> float:
    """Circular CRPS averaged over sites.

    Per site this is ``E d(X, x) - E d(X, X') / 2`` with the expectations
    taken over the predictive draws.
    """
    return crps_per_site(predictive_draws, truth, kind=kind, seed=seed)[0]


def crps_per_site(predictive_draws: Sequence, truth, kind: str = "cosine", seed: int = 0):
    """Mean CRPS, per-site values and whether any site was subsampled."""
    t = np.atleast_1d(np.asarray(truth, dtype=float))
    if len(predictive_draws) != t.size or t.size == 0:
        raise InvalidArgumentError("need one non-empty draw set per truth value")
    rng = np.random.default_rng(seed)
    scores = []
    any_sub = False
    for draws, tv in zip(predictive_draws, t):
        d = np.asarray(draws, dtype=float).ravel()
        if d.size < 2:
            raise InvalidArgumentError("CRPS needs at least 2 predictive draws per site")
        score, sub = _site_crps(d, float(tv), kind, rng)
        scores.append(max(score, 0.0) if kind == "cosine" else score)
        any_sub |= sub
    return float(np.mean(scores)), np.asarray(scores), any_sub


def evaluate(results, valid: SiteTable, kind: str = "cosine", model: str = "", split_seed: int = 0) -> EvalReport:
    """Score kriging results against held-out observations."""
    pred = np.array([r.direction for r in results])
    truth = np.asarray(valid.direction)
    errors = circ_dist(pred, truth, kind=kind)
    mean_crps, _, sub = crps_per_site([r.predictive_draws for r in results], truth, kind=kind, seed=split_seed)
    report = EvalReport(
        ape=ape(pred, truth, kind=kind),
        crps=mean_crps,
        per_site=[
            SiteError(sid, float(t), float(p), float(e))
            for sid, t, p, e in zip(valid.site_id, truth, pred, np.atleast_1d(errors))
        ],
        model=model,
        split_seed=split_seed,
    )
    if sub:
        report.notes.append(f"pairwise CRPS term subsampled to {MAX_PAIRWISE_DRAWS} draws")
    return report
