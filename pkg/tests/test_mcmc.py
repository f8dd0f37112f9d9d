import math
from dataclasses import dataclass, field

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from circspace.circular import circ_resultant
from circspace.exceptions import ConfigError, InitializationError, UndefinedDirectionError
from circspace.mcmc import (
    AdaptiveScale,
    ChainConfig,
    Kernel,
    adapt_scale,
    circular_trace_summary,
    psrf,
    run_chains,
    rw_metropolis_step,
)


def std_normal(v):
    return -0.5 * v * v


def test_chain_config_defaults_and_validation():
    cfg = ChainConfig()
    assert (cfg.n_iter, cfg.burnin, cfg.thin, cfg.n_chains) == (100_000, 30_000, 10, 2)
    assert (cfg.adapt_start, cfg.adapt_end, cfg.target_accept) == (100, 10_000, 0.234)
    with pytest.raises(ConfigError, match="burnin"):
        ChainConfig(n_iter=100, burnin=100, adapt_end=50)
    with pytest.raises(ConfigError, match="thin"):
        ChainConfig(thin=0)
    with pytest.raises(ConfigError, match="adapt"):
        ChainConfig(n_iter=1000, burnin=500, adapt_end=600)
    with pytest.raises(ConfigError, match="target_accept"):
        ChainConfig(target_accept=1.0)


@given(st.integers(2, 5000), st.data())
def test_retained_count_formula(n_iter, data):
    burnin = data.draw(st.integers(1, n_iter - 1))
    thin = data.draw(st.integers(1, 50))
    cfg = ChainConfig(n_iter=n_iter, burnin=burnin, thin=thin, adapt_start=0, adapt_end=burnin)
    assert cfg.n_retained == (n_iter - burnin) // thin


def test_retained_count_matches_run():
    cfg = ChainConfig(n_iter=137, burnin=20, thin=7, n_chains=1, adapt_start=0, adapt_end=20)
    assert run_chains(_IdentityKernel(), cfg)[0].n_draws == (137 - 20) // 7


def test_rw_step_flat_target_always_accepts():
    sc = AdaptiveScale()
    rng = np.random.default_rng(0)
    v = 0.0
    for _ in range(2000):
        v = rw_metropolis_step(v, lambda _: 0.0, sc, rng).value
    assert sc.acceptance_rate == 1.0


def test_rw_step_tiny_scale_accepts_and_barely_moves():
    sc = AdaptiveScale(log_sd=-30.0)
    rng = np.random.default_rng(1)
    v = 0.5
    for _ in range(2000):
        v = rw_metropolis_step(v, std_normal, sc, rng).value
    assert sc.acceptance_rate > 0.99
    assert abs(v - 0.5) < 1e-9


def test_rw_step_tuned_normal_acceptance_band():
    sc = AdaptiveScale(log_sd=math.log(2.38))
    rng = np.random.default_rng(2)
    v = 0.0
    for _ in range(100_000):
        v = rw_metropolis_step(v, std_normal, sc, rng).value
    assert 0.35 < sc.acceptance_rate < 0.55


def test_rw_step_nan_proposal_rejected_and_counted():
    sc = AdaptiveScale()
    rng = np.random.default_rng(3)
    res = rw_metropolis_step(1.0, lambda v: 0.0 if v == 1.0 else float("nan"), sc, rng)
    assert res.value == 1.0 and not res.accepted
    assert sc.n_invalid == 1


def test_rw_step_detailed_balance_smoke():
    sc = AdaptiveScale(log_sd=math.log(2.38))
    rng = np.random.default_rng(4)
    v, draws = 0.0, []
    for i in range(101_000):
        v = rw_metropolis_step(v, std_normal, sc, rng).value
        if i >= 1000:
            draws.append(v)
    draws = np.asarray(draws)
    assert abs(draws.mean()) < 0.05
    assert abs(draws.var() - 1.0) < 0.1


def test_adapt_scale_rules():
    cfg = ChainConfig(n_iter=20_000, burnin=10_000, adapt_end=10_000)
    sc = AdaptiveScale(log_sd=0.3, accepted=234, proposed=1000)
    assert adapt_scale(sc, 400, cfg).log_sd == 0.3
    sc = AdaptiveScale(log_sd=0.3, accepted=50, proposed=50)
    out = adapt_scale(sc, 400, cfg)
    assert out.log_sd == pytest.approx(0.3 + min(0.05, 1 / math.sqrt(400)))
    assert (out.accepted, out.proposed) == (0, 0)
    late = adapt_scale(sc, 2500, cfg)
    assert late.log_sd == pytest.approx(0.3 + 1 / math.sqrt(2500))
    frozen = adapt_scale(sc, 10_000, cfg)
    assert frozen.log_sd == 0.3 and frozen.accepted == 50
    assert adapt_scale(sc, 50, cfg).log_sd == 0.3  # before adapt_start


@dataclass
class _WalkState:
    value: float = 0.0
    scales: dict = field(default_factory=lambda: {"v": AdaptiveScale()})


class _NormalKernel(Kernel):
    def initial_state(self, rng):
        return _WalkState()

    def sweep(self, state, rng):
        state.value = rw_metropolis_step(state.value, std_normal, state.scales["v"], rng).value
        return state

    def record(self, state):
        return {"v": state.value}

    def log_posterior_terms(self, state):
        return {"v": std_normal(state.value)}


class _IdentityKernel(Kernel):
    def initial_state(self, rng):
        return {"a": 3.0}

    def sweep(self, state, rng):
        return state

    def record(self, state):
        return {"a": state["a"]}


class _BadStart(_IdentityKernel):
    def log_posterior_terms(self, state):
        return {"tau2": -math.inf}


def test_run_chains_identity_kernel():
    cfg = ChainConfig(n_iter=100, burnin=30, thin=10, adapt_start=0, adapt_end=30)
    out = run_chains(_IdentityKernel(), cfg)
    assert len(out) == 2
    assert [c.seed for c in out] == [0, 1]
    for c in out:
        assert c.n_draws == 7
        assert np.all(c.draws["a"] == 3.0)


def test_run_chains_reproducible_and_distinct_seeds():
    cfg = ChainConfig(n_iter=3000, burnin=1000, thin=2, adapt_end=1000, seed=5)
    a = run_chains(_NormalKernel(), cfg)
    b = run_chains(_NormalKernel(), cfg)
    for ca, cb in zip(a, b):
        assert np.array_equal(ca.draws["v"], cb.draws["v"])
    assert not np.array_equal(a[0].draws["v"], a[1].draws["v"])


def test_run_chains_parallel_matches_sequential():
    cfg = ChainConfig(n_iter=1000, burnin=200, thin=2, adapt_end=200, seed=2)
    seq = run_chains(_NormalKernel(), cfg)
    par = run_chains(_NormalKernel(), cfg, n_jobs=2)
    for a, b in zip(seq, par):
        assert np.array_equal(a.draws["v"], b.draws["v"])


def test_adaptation_freezes_after_window():
    cfg = ChainConfig(n_iter=4000, burnin=2000, thin=1, adapt_start=100, adapt_end=1000)
    out = run_chains(_NormalKernel(), cfg)[0]
    hist = out.scale_history["v"]
    batches = np.arange(1, hist.size + 1) * 50
    frozen = hist[batches >= cfg.adapt_end]
    assert np.all(frozen == frozen[0])
    assert np.any(np.diff(hist[batches < cfg.adapt_end]) != 0)


def test_run_chains_initialization_error_names_parameter():
    cfg = ChainConfig(n_iter=10, burnin=5, thin=1, adapt_start=0, adapt_end=5)
    with pytest.raises(InitializationError, match="tau2"):
        run_chains(_BadStart(), cfg)


def test_psrf_examples():
    x = np.random.default_rng(0).standard_normal(500)
    assert psrf([x, x]) == 1.0
    rng = np.random.default_rng(1)
    assert psrf(rng.standard_normal((2, 10_000))) < 1.05
    shifted = np.vstack([rng.standard_normal(1000), 10 + rng.standard_normal(1000)])
    assert psrf(shifted) > 3


def test_psrf_degenerate_and_invalid():
    assert psrf([np.zeros(20), np.ones(20)]) == math.inf
    assert psrf([np.zeros(20), np.zeros(20)]) == 1.0
    with pytest.raises(ConfigError):
        psrf([np.zeros(5), np.zeros(5)])
    with pytest.raises(ConfigError):
        psrf([np.zeros(20)])


def test_psrf_affine_invariant():
    rng = np.random.default_rng(2)
    chains = rng.standard_normal((3, 200)) + np.array([[0.0], [0.3], [-0.2]])
    assert psrf(chains) == pytest.approx(psrf(4.0 * chains - 7.0), rel=1e-12)


def test_circular_trace_summary_examples():
    m, c = circular_trace_summary([1.2] * 5)
    assert m == pytest.approx(1.2) and c == pytest.approx(1.0)
    assert circular_trace_summary([0.0, math.pi, 0.5])[1] < 1
    m, _ = circular_trace_summary([2 * math.pi - 0.01, 0.01])
    assert min(m, 2 * math.pi - m) < 1e-12
    # antipodal draws have zero concentration, so no mean direction exists
    assert circ_resultant([0.0, math.pi]) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(UndefinedDirectionError):
        circular_trace_summary([0.0, math.pi])
