import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial import cKDTree
from scipy.stats import multivariate_normal

from sogmap.core import COV_REG, Gmm
from sogmap.infer import InferenceConfig, reconstruct
from sogmap.sogmm import (SogmmConfig, em_fit, fit_sogmm, frame_features, gbms_mode_count,
                          kinit_responsibilities, log_responsibilities, m_step, mean_shift_seeds, merge_modes)


def test_config_validation():
    for bad in ({"bandwidth": 0}, {"em_tol": 0}, {"em_max_iters": 0}, {"gbms_shift_tol": -1.0},
                {"min_points_per_component": 0}):
        with pytest.raises(ValueError):
            SogmmConfig(**bad)
    assert SogmmConfig(bandwidth=0.05).shift_tol == pytest.approx(5e-6)


# mode seeking -------------------------------------------------------------

def test_gbms_identical_features_single_mode():
    modes = gbms_mode_count(np.full((50, 2), 0.4), SogmmConfig(bandwidth=0.05))
    assert modes.n_modes == 1
    assert np.all(modes.labels == 0)


def test_gbms_two_clusters_matches_exhaustive_mean_shift():
    rng = np.random.default_rng(0)
    feats = np.vstack([rng.normal(0.1, 0.01, (200, 2)), rng.normal(0.9, 0.01, (150, 2))])
    cfg = SogmmConfig(bandwidth=0.05)
    modes = gbms_mode_count(feats, cfg)
    # oracle: mean shift seeded from every data point, merged at the same radius
    conv, counts = mean_shift_seeds(feats, feats, 0.05, 200, 1e-8)
    oracle = merge_modes(conv, counts, 0.025)
    assert modes.n_modes == 2 == len(oracle)
    d, _ = cKDTree(oracle).query(modes.centers)
    assert d.max() < 0.01
    assert len(set(modes.labels[:200])) == 1 and len(set(modes.labels[200:])) == 1


def test_gbms_wide_bandwidth_swallows_grid():
    g = np.linspace(0, 0.3, 7)
    feats = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    assert gbms_mode_count(feats, SogmmConfig(bandwidth=1.0)).n_modes == 1


def test_gbms_rejects_bad_features():
    with pytest.raises(ValueError):
        gbms_mode_count(np.empty((0, 2)), SogmmConfig())
    with pytest.raises(ValueError):
        gbms_mode_count(np.array([[np.nan, 0.1]]), SogmmConfig())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.02, 0.3))
def test_gbms_labels_are_compact(seed, bw):
    feats = np.random.default_rng(seed).uniform(size=(120, 2))
    modes = gbms_mode_count(feats, SogmmConfig(bandwidth=bw))
    assert modes.n_modes >= 1
    assert set(np.unique(modes.labels)) == set(range(modes.n_modes))
    assert modes.centers.shape == (modes.n_modes, 2)


# initialization -----------------------------------------------------------

def test_kinit_one_hot():
    init = kinit_responsibilities(np.zeros((3, 4)), [0, 1, 0], 2)
    np.testing.assert_array_equal(init.gamma, [[1, 0], [0, 1], [1, 0]])
    assert init.n_dropped == 0
    single = kinit_responsibilities(np.zeros((4, 4)), [0] * 4, 1)
    np.testing.assert_array_equal(single.gamma, np.ones((4, 1)))


def test_kinit_drops_empty_modes():
    init = kinit_responsibilities(np.zeros((3, 4)), [0, 2, 2], 3)
    assert init.gamma.shape == (3, 2) and init.n_dropped == 1
    with pytest.raises(ValueError):
        kinit_responsibilities(np.zeros((2, 4)), [0, 3], 2)


def test_kinit_m_step_reproduces_cluster_moments():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(300, 4))
    labels = rng.integers(0, 5, 300)
    init = kinit_responsibilities(x, labels, 5)
    model = m_step(x, init.gamma)
    for k in range(5):
        pts = x[labels == k]
        np.testing.assert_allclose(model.means[k], pts.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(model.covariances[k], np.cov(pts.T, bias=True) + COV_REG * np.eye(4),
                                   atol=1e-12)
        assert model.weights[k] == pytest.approx(len(pts) / 300, abs=1e-15)
    assert model.support_count == 300


# EM -----------------------------------------------------------------------

def test_log_responsibilities_match_direct_form():
    rng = np.random.default_rng(2)
    m = Gmm(rng.dirichlet(np.ones(3)), rng.normal(size=(3, 4)), np.stack([np.eye(4) * s for s in (0.5, 1, 2)]))
    x = rng.normal(size=(500, 4))
    lg, _ = log_responsibilities(x, m)
    dens = np.column_stack([m.weights[k] * multivariate_normal(m.means[k], m.covariances[k]).pdf(x) for k in range(3)])
    np.testing.assert_allclose(np.exp(lg), dens / dens.sum(axis=1, keepdims=True), rtol=0, atol=1e-9)


def test_em_single_gaussian_is_sample_moments():
    rng = np.random.default_rng(3)
    x = rng.multivariate_normal([1, 2, 3, 0.5], np.diag([0.1, 0.2, 0.3, 0.01]), size=1000)
    res = em_fit(x, np.ones((1000, 1)), SogmmConfig())
    np.testing.assert_allclose(res.model.means[0], x.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(res.model.covariances[0], np.cov(x.T, bias=True) + COV_REG * np.eye(4), atol=1e-9)
    assert res.n_iter <= 2 and res.converged
    assert res.model.support_count == 1000


def test_em_two_clusters_recovers_proportions():
    rng = np.random.default_rng(4)
    n1, n2 = 700, 300
    x = np.vstack([rng.normal(0, 0.1, (n1, 4)), rng.normal(3, 0.1, (n2, 4))])
    gamma0 = rng.dirichlet(np.ones(2), size=n1 + n2)
    res = em_fit(x, gamma0, SogmmConfig())
    assert sorted(res.model.weights) == pytest.approx([0.3, 0.7], abs=0.02)
    ll = np.array(res.log_likelihood)
    assert np.all(np.diff(ll) >= -1e-8 * np.abs(ll[:-1]))


def test_em_removes_starved_components():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(100, 4))
    gamma = np.zeros((100, 3))
    gamma[:, 0] = 1.0
    gamma[0] = [0.5, 0.0, 0.5]
    res = em_fit(x, gamma, SogmmConfig())
    assert res.n_removed == 2 and res.model.n_components == 1
    assert res.model.weights.sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 5))
def test_em_monotone_and_valid(seed, k):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-2, 2, (k, 4))
    x = centers[rng.integers(0, k, 400)] + rng.normal(0, 0.3, (400, 4))
    gamma0 = kinit_responsibilities(x, rng.integers(0, k, 400), k).gamma
    res = em_fit(x, gamma0, SogmmConfig(em_max_iters=30))
    ll = np.array(res.log_likelihood)
    assert np.all(np.diff(ll) >= -1e-8 * np.abs(ll[:-1]))
    assert res.model.weights.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(np.linalg.eigvalsh(res.model.covariances) > 0)


# frame fitting ------------------------------------------------------------

def plane_frame(n_side=60, noise=0.002, intensity=None, seed=0):
    """Fronto-parallel plane at depth 2 m, 1 m wide, with the given intensity function."""
    rng = np.random.default_rng(seed)
    g = np.linspace(-0.5, 0.5, n_side)
    xx, yy = np.meshgrid(g, g)
    z = 2.0 + rng.normal(0, noise, xx.shape)
    i = np.full(xx.shape, 0.5) if intensity is None else intensity(xx, yy)
    pts = np.column_stack([xx.ravel(), yy.ravel(), z.ravel(), i.ravel()])
    return pts, z.ravel()


def checker(xx, yy):
    return np.where((np.floor(xx / 0.25) + np.floor(yy / 0.25)) % 2 == 0, 0.2, 0.8)


def test_fit_plane_constant_intensity():
    pts, depth = plane_frame()
    model = fit_sogmm(pts, depth)
    assert model.n_components <= 3
    model.validate()
    # mean distance from the plane of the model's spatial samples
    cloud = reconstruct(model, InferenceConfig(total_samples=20_000))
    assert np.mean(np.abs(cloud[:, 2] - 2.0)) <= 2 * 0.002


def test_fit_checkerboard_needs_more_components():
    flat = fit_sogmm(*plane_frame())
    check = fit_sogmm(*plane_frame(intensity=checker))
    assert check.n_components > flat.n_components


def test_fit_bandwidth_monotone():
    rng = np.random.default_rng(6)
    g = np.linspace(-0.5, 0.5, 70)
    xx, yy = np.meshgrid(g, g)
    z = 1.5 + 0.8 * (xx + 0.5) + rng.normal(0, 0.003, xx.shape)
    i = 0.5 + 0.3 * np.sin(6 * xx) * np.cos(5 * yy)
    pts = np.column_stack([xx.ravel(), yy.ravel(), z.ravel(), i.ravel()])
    counts = [fit_sogmm(pts, z.ravel(), SogmmConfig(bandwidth=b)).n_components for b in (0.02, 0.03, 0.04, 0.05)]
    assert all(a >= b for a, b in zip(counts, counts[1:])), counts
    assert counts[0] > counts[-1]


def test_fit_degenerate_frame_reduces_modes():
    pts, depth = plane_frame(n_side=3, intensity=checker)
    model, info = fit_sogmm(pts, depth, SogmmConfig(min_points_per_component=4), return_info=True)
    assert info["n_modes"] <= 9 // 4
    assert model.n_components >= 1


def test_fit_rejects_empty():
    with pytest.raises(ValueError):
        fit_sogmm(np.empty((0, 4)), np.empty(0))


def test_features_are_clipped():
    f = frame_features([0.0, 2.5, 9.0], [-0.1, 0.5, 1.2], 5.0)
    np.testing.assert_array_equal(f, [[0, 0], [0.5, 0.5], [1, 1]])
