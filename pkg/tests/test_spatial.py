import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from circspace.exceptions import FactorizationError, InvalidArgumentError
from circspace.spatial import (
    CovarianceFactor,
    SiteTable,
    corr_matrix,
    cross_distances,
    distance_matrix,
    exp_corr,
    factorize,
    gaussian_conditional,
    log_mvn_density,
    mvn_sample,
)

from oracles import dense_conditional


def random_spd(rng, n, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eig = np.geomspace(1.0, cond, n)
    return q @ np.diag(eig) @ q.T


def test_site_table_validation():
    t = SiteTable(("a", "b"), [0, 1], [0, 1], [-0.5, 7.0])
    assert np.all((t.direction >= 0) & (t.direction < 2 * math.pi))
    assert t.coords.shape == (2, 2)
    assert t.subset([1]).site_id == ("b",)
    with pytest.raises(InvalidArgumentError, match="duplicate"):
        SiteTable(("a", "a"), [0, 1], [0, 1], [0, 0])
    with pytest.raises(InvalidArgumentError):
        SiteTable(("a",), [np.nan], [0], [0])
    with pytest.raises(ValueError):
        t.direction[0] = 1.0


def test_distance_matrix_examples():
    assert distance_matrix([(0, 0)]).d.tolist() == [[0.0]]
    assert distance_matrix([(0, 0), (3, 4)]).d[0, 1] == 5.0
    D = distance_matrix([(0, 0), (1, 0), (0, 1)])
    assert D.d[0, 1] == D.d[0, 2] == 1.0
    assert D.d[1, 2] == pytest.approx(math.sqrt(2))
    assert D.max_dist == pytest.approx(math.sqrt(2))
    with pytest.raises(InvalidArgumentError):
        distance_matrix([(0, np.inf)])


@settings(max_examples=25)
@given(st.integers(2, 12), st.integers(0, 10_000))
def test_distance_matrix_metric(n, seed):
    pts = np.random.default_rng(seed).uniform(-100, 100, (n, 2))
    d = distance_matrix(pts).d
    assert np.all(np.diag(d) == 0)
    assert np.array_equal(d, d.T)
    assert np.all(d[:, :, None] <= d[:, None, :] + d.T[None, :, :] + 1e-9)


def test_exp_corr_examples():
    assert exp_corr(0.0, 0.37) == 1.0
    assert exp_corr(1, 0.9) == pytest.approx(0.40657, abs=5e-6)
    assert exp_corr(10, 0.3) == pytest.approx(0.049787, abs=5e-7)
    with pytest.raises(InvalidArgumentError):
        exp_corr(1.0, 0.0)
    assert exp_corr(2.0, 0.1) > exp_corr(3.0, 0.1) > exp_corr(3.0, 0.2)


def test_corr_matrix_examples():
    D = distance_matrix([(0, 0), (5, 0)])
    R = corr_matrix(D, 0.2)
    assert np.all(np.diag(R) == 1.0)
    assert R[0, 1] == pytest.approx(math.exp(-1), abs=1e-12)
    line = corr_matrix(distance_matrix([(0, 0), (2, 0), (4, 0)]), 0.3)
    assert line[0, 2] == pytest.approx(line[0, 1] * line[1, 2], rel=1e-12)


def test_corr_matrix_duplicate_sites_named():
    D = distance_matrix([(0, 0), (1, 1), (1, 1)])
    with pytest.raises(FactorizationError, match="sites 1 and 2"):
        corr_matrix(D, 0.1)


def test_corr_matrix_positive_definite_random():
    rng = np.random.default_rng(1)
    for n in (5, 30, 100):
        D = distance_matrix(rng.uniform(0, 300, (n, 2)))
        for phi in (0.01, 0.05, 0.5):
            assert np.linalg.eigvalsh(corr_matrix(D, phi)).min() > 0


def test_factorize_round_trip_and_logdet():
    rng = np.random.default_rng(2)
    for cond in (1.0, 1e4, 1e8):
        A = random_spd(rng, 8, cond)
        f = factorize(A)
        rel = np.linalg.norm(f.lower @ f.lower.T - A) / np.linalg.norm(A)
        assert rel <= 1e-8
        assert f.logdet == pytest.approx(np.linalg.slogdet(A)[1], abs=1e-8)


def test_factorize_rejects_ill_conditioned():
    rng = np.random.default_rng(3)
    with pytest.raises(FactorizationError, match="ill-conditioned"):
        factorize(random_spd(rng, 6, 1e13))
    with pytest.raises(FactorizationError):
        factorize(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_factorize_jitter_once():
    # PSD but singular: the jittered retry succeeds only if allowed to be ill-conditioned
    A = np.ones((2, 2))
    f = factorize(A, max_condition=1e12)
    assert f.jittered


def test_gaussian_conditional_examples():
    mu = np.array([1.0, 2.0, 3.0])
    cov = np.diag([1.0, 2.0, 3.0])
    m, c = gaussian_conditional(mu, cov, [2], [10.0])
    np.testing.assert_allclose(m, [1.0, 2.0])
    np.testing.assert_allclose(c, np.diag([1.0, 2.0]))

    rho, z = 0.6, 1.7
    m, c = gaussian_conditional([0.5, -1.0], [[1, rho], [rho, 1]], [1], [z])
    assert m[0] == pytest.approx(0.5 + rho * (z + 1.0))
    assert c[0, 0] == pytest.approx(1 - rho**2)


def test_gaussian_conditional_matches_dense_oracle():
    rng = np.random.default_rng(4)
    S = random_spd(rng, 4, 20.0)
    mu = rng.standard_normal(4)
    vals = rng.standard_normal(2)
    m, c = gaussian_conditional(mu, S, [3, 1], vals)
    mo, co = dense_conditional(mu, S, [3, 1], vals)
    np.testing.assert_allclose(m, mo, atol=1e-10)
    np.testing.assert_allclose(c, co, atol=1e-10)
    assert np.linalg.eigvalsh(c).min() >= -1e-12


def test_gaussian_conditional_sequential_equals_joint():
    rng = np.random.default_rng(5)
    S = random_spd(rng, 5, 30.0)
    mu = rng.standard_normal(5)
    y = rng.standard_normal(5)
    # condition on {0} first, then on {1, 2} within the remainder (indices shift by one)
    m1, c1 = gaussian_conditional(mu, S, [0], [y[0]])
    m2, c2 = gaussian_conditional(m1, c1, [0, 1], y[1:3])
    mj, cj = gaussian_conditional(mu, S, [0, 1, 2], y[:3])
    np.testing.assert_allclose(m2, mj, atol=1e-8)
    np.testing.assert_allclose(c2, cj, atol=1e-8)


def test_mvn_sample_examples():
    zero = CovarianceFactor(lower=np.zeros((3, 3)), logdet=-np.inf)
    mean = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(mvn_sample(mean, zero, np.random.default_rng(0)), mean)

    rng = np.random.default_rng(11)
    draws = mvn_sample(np.zeros(2), factorize(np.eye(2)), rng, size=100_000)
    assert np.all(np.abs(draws.mean(axis=0)) < 0.02)

    draws = mvn_sample(np.zeros(2), factorize(np.diag([4.0, 1.0])), rng, size=100_000)
    np.testing.assert_allclose(draws.var(axis=0), [4.0, 1.0], rtol=0.05)

    with pytest.raises(InvalidArgumentError):
        mvn_sample(np.zeros(3), factorize(np.eye(2)), rng)


def test_mvn_sample_deterministic_per_seed():
    f = factorize(np.array([[2.0, 0.5], [0.5, 1.0]]))
    a = mvn_sample([0, 0], f, np.random.default_rng(9))
    b = mvn_sample([0, 0], f, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_log_mvn_density_examples():
    assert log_mvn_density([0.0], [0.0], factorize(np.eye(1))) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)
    s2 = 2.5
    val = log_mvn_density([1.0 + math.sqrt(s2)], [1.0], factorize(np.array([[s2]])))
    assert val == pytest.approx(-0.5 * math.log(2 * math.pi * s2) - 0.5, abs=1e-12)
    with pytest.raises(InvalidArgumentError):
        log_mvn_density([0.0, 1.0], [0.0], factorize(np.eye(1)))


def test_log_mvn_density_dense_oracle_and_maximum():
    rng = np.random.default_rng(6)
    S = random_spd(rng, 3, 15.0)
    mu = rng.standard_normal(3)
    x = rng.standard_normal(3)
    d = x - mu
    oracle = -0.5 * (3 * math.log(2 * math.pi) + math.log(np.linalg.det(S)) + d @ np.linalg.inv(S) @ d)
    f = factorize(S)
    assert log_mvn_density(x, mu, f) == pytest.approx(oracle, abs=1e-10)
    at_mean = log_mvn_density(mu, mu, f)
    for _ in range(20):
        assert log_mvn_density(mu + 0.1 * rng.standard_normal(3), mu, f) < at_mean


def test_cross_distances_shape():
    d = cross_distances([(0, 0), (1, 0)], [(0, 3), (4, 0), (0, 0)])
    assert d.shape == (2, 3)
    assert d[0, 0] == 3.0 and d[1, 1] == 3.0
