"""Adaptive Metropolis-within-Gibbs machinery.

A model supplies a :class:`Kernel`; :func:`run_chains` drives one or
more independent chains through it, adapts the random-walk scales
inside a fixed window and keeps post-burnin, thinned draws.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Dict, List, Mapping, NamedTuple, Optional

import numpy as np

from .circular import circ_mean, circ_resultant
from .exceptions import ConfigError, InitializationError

logger = logging.getLogger(__name__)

#: iterations between two adaptation updates
ADAPT_BATCH = 50


@dataclass(frozen=True)
class ChainConfig:
    """MCMC schedule. Defaults reproduce the long production run."""

    n_iter: int = 100_000
    burnin: int = 30_000
    thin: int = 10
    n_chains: int = 2
    target_accept: float = 0.234
    adapt_start: int = 100
    adapt_end: int = 10_000
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            if f.name == "target_accept":
                continue
            value = getattr(self, f.name)
            if isinstance(value, bool) or int(value) != value:
                raise ConfigError(f"{f.name}: expected an integer, got {value!r}")
            object.__setattr__(self, f.name, int(value))
        if self.n_iter < 1:
            raise ConfigError(f"n_iter: must be positive, got {self.n_iter}")
        if not 0 <= self.burnin < self.n_iter:
            raise ConfigError(f"burnin: must satisfy 0 <= burnin < n_iter, got {self.burnin}")
        if self.thin < 1:
            raise ConfigError(f"thin: must be >= 1, got {self.thin}")
        if self.n_chains < 1:
            raise ConfigError(f"n_chains: must be >= 1, got {self.n_chains}")
        if not 0.0 < float(self.target_accept) < 1.0:
            raise ConfigError(f"target_accept: must lie in (0, 1), got {self.target_accept}")
        object.__setattr__(self, "target_accept", float(self.target_accept))
        if not 0 <= self.adapt_start < self.adapt_end <= self.burnin:
            raise ConfigError(
                "adapt_start/adapt_end: need 0 <= adapt_start < adapt_end <= burnin, got "
                f"{self.adapt_start}, {self.adapt_end} with burnin {self.burnin}"
            )

    @property
    def n_retained(self) -> int:
        return (self.n_iter - self.burnin) // self.thin


@dataclass
class AdaptiveScale:
    """Random-walk scale on the log scale, plus acceptance counters.

    ``accepted``/``proposed`` count the current adaptation batch and are
    reset by :func:`adapt_scale`; the ``total_*`` counters are reset only
    when retained sampling starts.
    """

    log_sd: float = 0.0
    accepted: int = 0
    proposed: int = 0
    total_accepted: int = 0
    total_proposed: int = 0
    n_invalid: int = 0

    @property
    def sd(self) -> float:
        return math.exp(self.log_sd)

    @property
    def acceptance_rate(self) -> float:
        if self.total_proposed == 0:
            return float("nan")
        return self.total_accepted / self.total_proposed


class StepResult(NamedTuple):
    value: float
    accepted: bool
    log_target: float


def rw_metropolis_step(
    current: float,
    log_target: Callable[[float], float],
    scale: AdaptiveScale,
    rng: np.random.Generator,
    log_current: Optional[float] = None,
) -> StepResult:
    """One Gaussian random-walk Metropolis step.

    ``log_current`` may carry the cached target at ``current``. A
    proposal whose target is NaN is rejected and counted in
    ``scale.n_invalid``.
    """
    if log_current is None:
        log_current = log_target(current)
    proposal = current + scale.sd * rng.standard_normal()
    log_u = math.log(rng.random())
    scale.proposed += 1
    scale.total_proposed += 1
    log_prop = log_target(proposal)
    if math.isnan(log_prop):
        scale.n_invalid += 1
        return StepResult(current, False, log_current)
    if log_prop - log_current >= log_u:
        scale.accepted += 1
        scale.total_accepted += 1
        return StepResult(proposal, True, log_prop)
    return StepResult(current, False, log_current)


def adapt_scale(scale: AdaptiveScale, iteration: int, cfg: ChainConfig) -> AdaptiveScale:
    """Robbins-Monro update of ``log_sd`` at a batch boundary.

    The step is ``min(0.05, 1/sqrt(iteration))`` towards the target
    acceptance rate. Outside ``[adapt_start, adapt_end)`` the scale is
    returned unchanged.
    """
    if not cfg.adapt_start <= iteration < cfg.adapt_end or iteration < 1:
        return scale
    rate = scale.accepted / scale.proposed if scale.proposed else cfg.target_accept
    delta = min(0.05, 1.0 / math.sqrt(iteration))
    return replace(
        scale,
        log_sd=scale.log_sd + delta * float(np.sign(rate - cfg.target_accept)),
        accepted=0,
        proposed=0,
    )


class Kernel:
    """Interface between a model and :func:`run_chains`.

    Subclasses own the model data (read-only) and implement a full
    Gibbs sweep. The chain state is any object with a ``scales`` mapping
    of :class:`AdaptiveScale`; it is owned by exactly one chain.
    """

    def initial_state(self, rng: np.random.Generator):
        raise NotImplementedError

    def sweep(self, state, rng: np.random.Generator):
        raise NotImplementedError

    def record(self, state) -> Dict[str, np.ndarray]:
        raise NotImplementedError

    def log_posterior_terms(self, state) -> Dict[str, float]:
        """Log-posterior contributions keyed by parameter, for start-up checks."""
        return {}


@dataclass
class ChainOutput:
    """Retained draws of one chain."""

    draws: Dict[str, np.ndarray]
    acceptance: Dict[str, float]
    seed: int
    scale_history: Dict[str, np.ndarray] = field(default_factory=dict)
    invalid_proposals: Dict[str, int] = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return len(next(iter(self.draws.values()))) if self.draws else 0


def _check_initial(kernel: Kernel, state) -> None:
    for name, value in kernel.log_posterior_terms(state).items():
        if not np.isfinite(value):
            raise InitializationError(
                f"log posterior is not finite at the initial value of {name!r} ({value})"
            )


def _run_one(kernel: Kernel, cfg: ChainConfig, chain: int) -> ChainOutput:
    seed = cfg.seed + chain
    rng = np.random.default_rng(seed)
    state = kernel.initial_state(rng)
    _check_initial(kernel, state)
    scales: Mapping[str, AdaptiveScale] = getattr(state, "scales", {})
    history: Dict[str, List[float]] = {name: [] for name in scales}
    kept: Dict[str, List[np.ndarray]] = {}
    for it in range(1, cfg.n_iter + 1):
        state = kernel.sweep(state, rng)
        scales = getattr(state, "scales", {})
        if it % ADAPT_BATCH == 0:
            for name in scales:
                scales[name] = adapt_scale(scales[name], it, cfg)
                history[name].append(scales[name].log_sd)
        if it == cfg.burnin:
            for sc in scales.values():
                sc.total_accepted = 0
                sc.total_proposed = 0
        if it > cfg.burnin and (it - cfg.burnin) % cfg.thin == 0:
            for name, value in kernel.record(state).items():
                kept.setdefault(name, []).append(np.array(value, copy=True))
    scales = getattr(state, "scales", {})
    return ChainOutput(
        draws={name: np.asarray(v) for name, v in kept.items()},
        acceptance={name: sc.acceptance_rate for name, sc in scales.items()},
        seed=seed,
        scale_history={name: np.asarray(v) for name, v in history.items()},
        invalid_proposals={name: sc.n_invalid for name, sc in scales.items()},
    )


def run_chains(kernel: Kernel, cfg: ChainConfig, n_jobs: int = 1) -> List[ChainOutput]:
    """Run ``cfg.n_chains`` independent chains seeded ``cfg.seed + chain``.

    With ``n_jobs > 1`` chains run in separate processes; the output is
    identical to the sequential run.
    """
    if n_jobs is not None and n_jobs != 1 and cfg.n_chains > 1:
        from joblib import Parallel, delayed

        return list(
            Parallel(n_jobs=n_jobs)(delayed(_run_one)(kernel, cfg, c) for c in range(cfg.n_chains))
        )
    outputs = []
    for c in range(cfg.n_chains):
        logger.debug("running chain %d with seed %d", c, cfg.seed + c)
        outputs.append(_run_one(copy.copy(kernel), cfg, c))
    return outputs


def psrf(chains) -> float:
    """Gelman-Rubin potential scale reduction factor of one scalar.

    Values below one (possible through the ``(n-1)/n`` factor) are
    floored at one. Returns ``inf`` if every chain is constant but the
    chain means differ.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ConfigError("psrf needs at least two chains of equal length")
    m, n = x.shape
    if n < 10:
        raise ConfigError(f"psrf needs chains of length >= 10, got {n}")
    means = x.mean(axis=1)
    w = x.var(axis=1, ddof=1).mean()
    b = n * means.var(ddof=1)
    if w <= 0.0:
        return 1.0 if b <= 0.0 else float("inf")
    v = (n - 1) / n * w + b / n
    return max(1.0, math.sqrt(v / w))


def circular_trace_summary(draws):
    """Mean direction and resultant length of circular draws."""
    return circ_mean(draws), circ_resultant(draws)
