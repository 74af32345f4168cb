import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.stats import multivariate_normal

from sogmap import core
from sogmap.core import (Component, Gmm, NoSupportError, box_muller, component_rng, condition_intensity,
                         gaussian_log_density, gmm_log_likelihood, marginalize_spatial, sample_component,
                         sample_gaussian)


def random_spd(rng, d, scale=1.0):
    a = rng.normal(size=(d, d))
    return scale * (a @ a.T + 0.5 * np.eye(d))


def random_gmm(rng, k, d=4, spread=1.0, scale=0.3):
    w = rng.dirichlet(np.ones(k))
    mu = rng.normal(scale=spread, size=(k, d))
    cov = np.stack([random_spd(rng, d, scale) for _ in range(k)])
    return Gmm(w, mu, cov)


def explicit_log_density(x, mean, cov):
    d = len(mean)
    diff = x - mean
    dens = math.exp(-0.5 * diff @ np.linalg.inv(cov) @ diff) / math.sqrt((2 * math.pi) ** d * np.linalg.det(cov))
    return math.log(dens)


# gaussian_log_density -----------------------------------------------------

def test_log_density_identity_at_mean():
    assert gaussian_log_density(np.zeros(4), np.zeros(4), np.eye(4)) == pytest.approx(-2 * math.log(2 * math.pi), abs=1e-15)


def test_log_density_unit_mahalanobis():
    val = gaussian_log_density(np.array([1.0, 0, 0]), np.zeros(3), np.eye(3))
    assert val == pytest.approx(-1.5 * math.log(2 * math.pi) - 0.5, abs=1e-15)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_log_density_matches_explicit_formula(d):
    rng = np.random.default_rng(d)
    for _ in range(50):
        cov = random_spd(rng, d)
        mean = rng.normal(size=d)
        x = mean + rng.normal(size=d)
        got = gaussian_log_density(x, mean, np.linalg.cholesky(cov))
        assert got == pytest.approx(explicit_log_density(x, mean, cov), rel=1e-10)
        assert got == pytest.approx(multivariate_normal(mean, cov).logpdf(x), rel=1e-10)


def test_log_density_batched_points():
    rng = np.random.default_rng(3)
    cov = random_spd(rng, 4)
    x = rng.normal(size=(20, 4))
    got = gaussian_log_density(x, np.zeros(4), np.linalg.cholesky(cov))
    np.testing.assert_allclose(got, multivariate_normal(np.zeros(4), cov).logpdf(x), rtol=1e-12)


def test_log_density_rejects_bad_input():
    with pytest.raises(ValueError):
        gaussian_log_density(np.array([np.nan, 0, 0]), np.zeros(3), np.eye(3))
    with pytest.raises(ValueError):
        gaussian_log_density(np.zeros(3), np.zeros(3), np.diag([1.0, 0.0, 1.0]))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-50, 50))
def test_log_density_translation_invariant(seed, shift):
    rng = np.random.default_rng(seed)
    cov = random_spd(rng, 3)
    chol = np.linalg.cholesky(cov)
    mean, x = rng.normal(size=3), rng.normal(size=3)
    a = gaussian_log_density(x, mean, chol)
    b = gaussian_log_density(x + shift, mean + shift, chol)
    assert a == pytest.approx(b, rel=1e-9, abs=1e-9)


# Gmm container ------------------------------------------------------------

def test_gmm_validation():
    with pytest.raises(ValueError):
        Gmm([0.5, 0.4], np.zeros((2, 4)), np.stack([np.eye(4)] * 2))
    with pytest.raises(ValueError):
        Gmm([1.0], np.zeros((1, 2)), np.eye(2)[None])
    bad = np.eye(4)
    bad[0, 1] = 0.1
    with pytest.raises(ValueError):
        Gmm([1.0], np.zeros((1, 4)), bad[None])
    with pytest.raises(ValueError):
        Gmm(np.empty(0), np.empty((0, 4)), np.empty((0, 4, 4)))
    m = Gmm([1.0], np.zeros(4), np.eye(4))
    assert m.n_components == 1 and m.dim == 4
    assert isinstance(m.component(0), Component)


# gmm_log_likelihood -------------------------------------------------------

def test_mixture_single_component_at_mean():
    m = Gmm([1.0], np.zeros((1, 3)), np.eye(3)[None])
    assert gmm_log_likelihood(np.zeros((1, 3)), m)[0] == pytest.approx(-1.5 * math.log(2 * math.pi), abs=1e-15)


def test_mixture_collapse_of_duplicates():
    rng = np.random.default_rng(1)
    cov = random_spd(rng, 3)
    one = Gmm([1.0], np.ones((1, 3)), cov[None])
    two = Gmm([0.5, 0.5], np.ones((2, 3)), np.stack([cov, cov]))
    x = rng.normal(size=(30, 3))
    np.testing.assert_allclose(gmm_log_likelihood(x, two), gmm_log_likelihood(x, one), rtol=0, atol=1e-13)


def test_mixture_matches_naive_sum():
    rng = np.random.default_rng(2)
    m = random_gmm(rng, 5, d=3)
    x = rng.normal(size=(100, 3))
    naive = np.zeros(100, dtype=np.longdouble)
    for k in range(5):
        naive += np.longdouble(m.weights[k]) * np.exp(
            multivariate_normal(m.means[k], m.covariances[k]).logpdf(x).astype(np.longdouble))
    np.testing.assert_allclose(gmm_log_likelihood(x, m), np.log(naive).astype(float), rtol=0, atol=1e-9)


def test_mixture_subset_and_errors():
    rng = np.random.default_rng(4)
    m = random_gmm(rng, 6)
    x = rng.normal(size=(10, 4))
    sub = gmm_log_likelihood(x, m, [1, 4])
    ref = np.logaddexp(
        np.log(m.weights[1]) + multivariate_normal(m.means[1], m.covariances[1]).logpdf(x),
        np.log(m.weights[4]) + multivariate_normal(m.means[4], m.covariances[4]).logpdf(x),
    )
    np.testing.assert_allclose(sub, ref, rtol=1e-12)
    with pytest.raises(ValueError):
        gmm_log_likelihood(x, m, [])
    with pytest.raises(IndexError):
        gmm_log_likelihood(x, m, [7])
    assert gmm_log_likelihood(np.empty((0, 4)), m).shape == (0,)


def test_mixture_far_points_do_not_underflow():
    m = Gmm([1.0], np.zeros((1, 3)), (1e-4 * np.eye(3))[None])
    ll = gmm_log_likelihood(np.array([[10.0, 0, 0]]), m)
    assert np.isfinite(ll[0]) and ll[0] < -1e5


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 8))
def test_mixture_permutation_invariant(seed, k):
    rng = np.random.default_rng(seed)
    m = random_gmm(rng, k)
    perm = rng.permutation(k)
    p = Gmm(m.weights[perm], m.means[perm], m.covariances[perm])
    x = rng.normal(size=(15, 4))
    np.testing.assert_allclose(gmm_log_likelihood(x, m), gmm_log_likelihood(x, p), rtol=0, atol=1e-12)


def test_thread_count_does_not_change_results():
    rng = np.random.default_rng(5)
    m = random_gmm(rng, 300)
    x = rng.normal(size=(9000, 4))
    base = gmm_log_likelihood(x, m)
    try:
        core.set_num_threads(3)
        threaded = gmm_log_likelihood(x, m)
    finally:
        core.set_num_threads(1)
    assert np.array_equal(base, threaded)


# marginalization ----------------------------------------------------------

def test_marginal_diagonal_blocks():
    m = Gmm([1.0], [[1.0, 2.0, 3.0, 0.5]], np.diag([0.1, 0.2, 0.3, 0.4])[None])
    g3 = marginalize_spatial(m)
    assert g3.dim == 3
    np.testing.assert_array_equal(g3.means, [[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(g3.covariances[0], np.diag([0.1, 0.2, 0.3]))


def test_marginal_preserves_weights():
    m = random_gmm(np.random.default_rng(6), 7)
    assert np.array_equal(marginalize_spatial(m).weights, m.weights)


def test_marginal_matches_quadrature():
    rng = np.random.default_rng(7)
    m = random_gmm(rng, 2, scale=0.2)
    g3 = marginalize_spatial(m)
    for _ in range(5):
        x = m.means[rng.integers(2), :3] + 0.3 * rng.normal(size=3)
        lo = min(m.means[:, 3] - 5 * np.sqrt(m.covariances[:, 3, 3]))
        hi = max(m.means[:, 3] + 5 * np.sqrt(m.covariances[:, 3, 3]))
        val, _ = integrate.quad(lambda i: np.exp(gmm_log_likelihood(np.array([[*x, i]]), m)[0]), lo, hi,
                                epsabs=1e-12, epsrel=1e-10, limit=200)
        assert gmm_log_likelihood(x[None], g3)[0] == pytest.approx(math.log(val), abs=1e-3)


# conditioning -------------------------------------------------------------

def test_condition_independent_component():
    m = Gmm([1.0], [[0.0, 0.0, 0.0, 0.3]], np.diag([1.0, 1.0, 1.0, 0.01])[None])
    mean, var = condition_intensity(m, np.array([0.7, -2.0, 1.0]))
    assert mean == pytest.approx(0.3, abs=1e-15)
    assert var == pytest.approx(0.01, abs=1e-15)


def test_condition_linear_gaussian():
    # x ~ N((1,0,0), I), i = 0.5 + 0.1 (x1 - 1) + e, e ~ N(0, 0.01)
    a = np.array([0.1, 0.0, 0.0])
    cov = np.eye(4)
    cov[:3, 3] = cov[3, :3] = a
    cov[3, 3] = a @ a + 0.01
    m = Gmm([1.0], [[1.0, 0.0, 0.0, 0.5]], cov[None])
    mean, var = condition_intensity(m, np.array([2.0, 0.0, 0.0]))
    assert mean == pytest.approx(0.6, abs=1e-12)
    assert var == pytest.approx(0.01, abs=1e-12)


def test_condition_far_field_collapse():
    cov = np.eye(4) * 0.01
    cov[0, 3] = cov[3, 0] = 0.005
    m = Gmm([0.5, 0.5], [[0, 0, 0, 0.2], [100, 0, 0, 0.8]], np.stack([cov, cov]))
    mean, _, w = condition_intensity(m, np.zeros(3), return_weights=True)
    assert mean == pytest.approx(0.2, abs=1e-9)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)


def test_condition_matches_quadrature():
    rng = np.random.default_rng(8)
    m = random_gmm(rng, 3, scale=0.05)
    m = Gmm(m.weights, np.column_stack([m.means[:, :3], [0.3, 0.5, 0.7]]), m.covariances)
    x = m.means[0, :3] + 0.05
    p = lambda i: np.exp(gmm_log_likelihood(np.array([[*x, i]]), m)[0])
    num, _ = integrate.quad(lambda i: i * p(i), -3, 4, limit=200, epsabs=1e-14)
    den, _ = integrate.quad(p, -3, 4, limit=200, epsabs=1e-14)
    mean, _ = condition_intensity(m, x)
    assert mean == pytest.approx(np.clip(num / den, 0, 1), abs=1e-6)


def test_condition_clamps_and_signals_no_support():
    m = Gmm([1.0], [[0.0, 0.0, 0.0, 1.4]], np.diag([1.0, 1.0, 1.0, 0.01])[None])
    assert condition_intensity(m, np.zeros(3))[0] == 1.0
    tight = Gmm([1.0], [[0.0, 0.0, 0.0, 0.5]], (1e-6 * np.eye(4))[None])
    with pytest.raises(NoSupportError):
        condition_intensity(tight, np.array([1e3, 0.0, 0.0]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_condition_weights_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    m = random_gmm(rng, int(rng.integers(1, 6)))
    _, _, w = condition_intensity(m, rng.normal(size=(5, 3)), return_weights=True)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)


# sampling -----------------------------------------------------------------

def test_box_muller_moments_and_determinism():
    z = box_muller(component_rng(11, 0), 200_001)
    assert z.shape == (200_001,)
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1) < 0.01
    assert np.array_equal(z, box_muller(component_rng(11, 0), 200_001))
    assert not np.array_equal(z[:100], box_muller(component_rng(11, 1), 100))


def test_sample_component_empty_and_moments():
    comp = Component(1.0, np.zeros(3), np.eye(3))
    assert sample_component(comp, 0, 1).shape == (0, 3)
    s = sample_component(comp, 100_000, 1)
    assert np.all(np.abs(s.mean(axis=0)) < 0.02)
    assert np.all(np.abs(np.cov(s.T) - np.eye(3)) < 0.05)
    assert np.array_equal(s, sample_component(comp, 100_000, 1))


def test_whitened_samples_are_standard():
    rng = np.random.default_rng(9)
    cov = random_spd(rng, 4, 0.1)
    mean = rng.normal(size=4)
    s = sample_gaussian(mean, cov, 100_000, 3)
    u = np.linalg.solve(np.linalg.cholesky(cov), (s - mean).T).T
    assert np.all(np.abs(u.mean(axis=0)) < 0.02)
    assert np.all(np.abs(np.cov(u.T) - np.eye(4)) < 0.05)
