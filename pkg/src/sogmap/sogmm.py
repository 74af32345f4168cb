"""Self-organizing GMM fitting for a single frame.

The component count comes from mean-shift mode seeking on a 2D feature
space (normalized depth, intensity); the modes seed a hard responsibility
matrix and a log-space EM refines a full-covariance 4D mixture.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .core import COV_REG, Gmm, component_log_densities, logsumexp_rows, regularize


@dataclass
class SogmmConfig:
    bandwidth: float = 0.02
    em_max_iters: int = 100
    em_tol: float = 1e-4
    gbms_max_iters: int = 100
    gbms_shift_tol: float | None = None  # defaults to 1e-4 * bandwidth
    min_points_per_component: int = 4
    # depth is divided by this (meters) before mode seeking
    depth_range: float = 5.0
    reg_covar: float = COV_REG

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.em_tol <= 0:
            raise ValueError("em_tol must be positive")
        if min(self.em_max_iters, self.gbms_max_iters, self.min_points_per_component) < 1:
            raise ValueError("iteration caps and min_points_per_component must be >= 1")
        if self.depth_range <= 0:
            raise ValueError("depth_range must be positive")
        if self.gbms_shift_tol is not None and self.gbms_shift_tol <= 0:
            raise ValueError("gbms_shift_tol must be positive")

    @property
    def shift_tol(self) -> float:
        return self.gbms_shift_tol if self.gbms_shift_tol is not None else 1e-4 * self.bandwidth


class Modes(NamedTuple):
    n_modes: int
    labels: np.ndarray
    centers: np.ndarray


class KInit(NamedTuple):
    gamma: np.ndarray
    n_dropped: int


@dataclass
class EmResult:
    model: Gmm
    log_likelihood: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False
    n_removed: int = 0


def _shift(seeds, feats, tree, bandwidth):
    """One mean-shift step for every seed; returns (new_seeds, neighbor_counts)."""
    pairs = cKDTree(seeds).sparse_distance_matrix(tree, bandwidth, output_type="ndarray")
    rows, cols = pairs["i"], pairs["j"]
    w = np.exp(-0.5 * (pairs["v"] / bandwidth) ** 2)
    m = seeds.shape[0]
    wsum = np.bincount(rows, weights=w, minlength=m)
    counts = np.bincount(rows, minlength=m)
    num = np.zeros_like(seeds)
    for d in range(seeds.shape[1]):
        num[:, d] = np.bincount(rows, weights=w * feats[cols, d], minlength=m)
    new = seeds.copy()
    ok = wsum > 0
    new[ok] = num[ok] / wsum[ok, None]
    return new, counts


def mean_shift_seeds(features, seeds, bandwidth, max_iters=100, shift_tol=None):
    """Move ``seeds`` uphill on the kernel density of ``features``.

    Each seed is replaced by the Gaussian-weighted mean (scale ``bandwidth``)
    of the features within radius ``bandwidth`` until it moves less than
    ``shift_tol`` or ``max_iters`` is reached.  Seeds with an empty
    neighborhood freeze in place.  Returns ``(seeds, neighbor_counts)``.
    """
    feats = np.asarray(features, dtype=np.float64)
    seeds = np.array(seeds, dtype=np.float64)
    tol = 1e-4 * bandwidth if shift_tol is None else shift_tol
    tree = cKDTree(feats)
    active = np.ones(seeds.shape[0], dtype=bool)
    counts = np.zeros(seeds.shape[0], dtype=np.int64)
    for _ in range(max_iters):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        new, cnt = _shift(seeds[idx], feats, tree, bandwidth)
        counts[idx] = cnt
        moved = np.linalg.norm(new - seeds[idx], axis=1)
        seeds[idx] = new
        active[idx[(moved < tol) | (cnt == 0)]] = False
    return seeds, counts


def merge_modes(points, weights, radius):
    """Greedy merge: keep the heaviest point, drop everything within ``radius``, repeat."""
    order = np.argsort(-np.asarray(weights), kind="stable")
    tree = cKDTree(points)
    keep = np.zeros(len(points), dtype=bool)
    removed = np.zeros(len(points), dtype=bool)
    for i in order:
        if removed[i]:
            continue
        keep[i] = True
        removed[tree.query_ball_point(points[i], radius)] = True
    return points[keep]


def gbms_mode_count(features, cfg: SogmmConfig) -> Modes:
    """Binned mean-shift mode count over 2D features in [0, 1]^2.

    Seeds sit at the centers of the occupied ``bandwidth``-sized grid cells.
    Converged seeds closer than ``bandwidth / 2`` collapse to one mode; every
    feature is labelled with its nearest mode.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise ValueError("gbms_mode_count needs a nonempty (N, 2) feature array")
    if not np.all(np.isfinite(feats)):
        raise ValueError("non-finite features")
    bw = cfg.bandwidth
    cells = np.unique(np.floor(feats / bw).astype(np.int64), axis=0)
    seeds = (cells + 0.5) * bw
    seeds, counts = mean_shift_seeds(feats, seeds, bw, cfg.gbms_max_iters, cfg.shift_tol)
    good = counts > 0
    if not np.any(good):
        # cannot happen for cell-center seeds, kept as a guard
        seeds, counts, good = feats[:1], np.ones(1), np.ones(1, dtype=bool)
    modes = merge_modes(seeds[good], counts[good], 0.5 * bw)
    _, labels = cKDTree(modes).query(feats, k=1)
    used, labels = np.unique(labels, return_inverse=True)
    modes = modes[used]
    return Modes(int(modes.shape[0]), labels.astype(np.int64), modes)


def kinit_responsibilities(points, assignments, n_modes: int) -> KInit:
    """Hard one-hot initial responsibilities from mode labels.

    Columns for modes that received no points are dropped (``n_dropped``
    reports how many) and the remaining labels are compacted.
    """
    labels = np.asarray(assignments, dtype=np.int64).reshape(-1)
    n = np.asarray(points).shape[0]
    if labels.shape[0] != n:
        raise ValueError("one assignment per point is required")
    if n and (labels.min() < 0 or labels.max() >= n_modes):
        raise ValueError("assignment out of range")
    used = np.unique(labels)
    remap = np.full(n_modes, -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    gamma = np.zeros((n, used.size))
    gamma[np.arange(n), remap[labels]] = 1.0
    return KInit(gamma, int(n_modes - used.size))


def m_step(points, gamma, reg_covar=COV_REG, support_count=None):
    """Weights, means and (regularized) covariances from responsibilities.

    Covariances come from responsibility-weighted second moments of the
    centered data (one matrix product for all components).
    """
    x = np.asarray(points, dtype=np.float64)
    n, d = x.shape
    nk = gamma.sum(axis=0)
    weights = nk / nk.sum()
    center = x.mean(axis=0)
    xc = x - center
    mc = (gamma.T @ xc) / nk[:, None]
    iu = np.triu_indices(d)
    outer = xc[:, iu[0]] * xc[:, iu[1]]
    second = (gamma.T @ outer) / nk[:, None]
    covs = np.empty((nk.size, d, d))
    covs[:, iu[0], iu[1]] = second - mc[:, iu[0]] * mc[:, iu[1]]
    covs[:, iu[1], iu[0]] = covs[:, iu[0], iu[1]]
    covs = regularize(covs, reg_covar)
    return Gmm(weights, mc + center, covs, n if support_count is None else support_count, _check=False)


def log_responsibilities(points, model: Gmm):
    """Log-space E-step: returns ``(ln gamma, per-point ln p(x))``."""
    logp = component_log_densities(points, model)
    logp += model.log_weights
    norm = logsumexp_rows(logp)
    logp -= norm[:, None]
    return logp, norm


def em_fit(points, gamma0, cfg: SogmmConfig) -> EmResult:
    """EM from an initial responsibility matrix until the relative change in
    total log-likelihood drops below ``cfg.em_tol``.

    Components whose responsibility mass falls below one point are removed and
    the weights renormalized; the number removed is reported.
    """
    x = np.asarray(points, dtype=np.float64)
    gamma = np.asarray(gamma0, dtype=np.float64)
    n = x.shape[0]
    if gamma.shape[0] != n:
        raise ValueError("responsibility rows must match the number of points")
    history = []
    removed = 0
    converged = False
    model = None
    it = 0
    for it in range(1, cfg.em_max_iters + 1):
        nk = gamma.sum(axis=0)
        keep = nk >= 1.0
        if not np.all(keep):
            removed += int((~keep).sum())
            gamma = gamma[:, keep]
            gamma /= gamma.sum(axis=1, keepdims=True)
        model = m_step(x, gamma, cfg.reg_covar)
        log_gamma, ll_points = log_responsibilities(x, model)
        gamma = np.exp(log_gamma)
        ll = float(ll_points.sum())
        history.append(ll)
        if len(history) > 1 and abs(ll - history[-2]) <= cfg.em_tol * abs(history[-2]):
            converged = True
            break
    model.validate()
    return EmResult(model, history, it, converged, removed)


def frame_features(depth, intensity, depth_range: float) -> np.ndarray:
    """2D mode-seeking features: depth scaled by ``depth_range`` and intensity, both clipped to [0, 1]."""
    d = np.clip(np.asarray(depth, dtype=np.float64) / depth_range, 0.0, 1.0)
    i = np.clip(np.asarray(intensity, dtype=np.float64), 0.0, 1.0)
    return np.column_stack([d, i])


def _reduce_modes(feats, modes: Modes, max_modes: int, min_count: int) -> Modes:
    """Keep the most populated modes (at most ``max_modes``, each with at least
    ``min_count`` points, never fewer than one) and relabel to the nearest kept mode."""
    counts = np.bincount(modes.labels, minlength=modes.n_modes)
    order = np.argsort(-counts, kind="stable")
    keep = [k for k in order[:max_modes] if counts[k] >= min_count]
    if not keep:
        keep = [int(order[0])]
    if len(keep) == modes.n_modes:
        return modes
    centers = modes.centers[np.sort(keep)]
    _, labels = cKDTree(centers).query(feats, k=1)
    used, labels = np.unique(labels, return_inverse=True)
    return Modes(int(used.size), labels.astype(np.int64), centers[used])


def fit_sogmm(points, depth, cfg: SogmmConfig | None = None, return_info: bool = False):
    """Fit a 4D mixture to one frame's (x, y, z, intensity) points.

    ``depth`` is the per-point sensor depth in meters (the camera z of each
    point), used only to build the mode-seeking features.
    """
    cfg = cfg or SogmmConfig()
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 4 or x.shape[0] == 0:
        raise ValueError("fit_sogmm needs a nonempty (N, 4) point array")
    feats = frame_features(depth, x[:, 3], cfg.depth_range)
    modes = gbms_mode_count(feats, cfg)
    n_gbms = modes.n_modes
    ppc = cfg.min_points_per_component
    max_modes = max(1, x.shape[0] // ppc)
    modes = _reduce_modes(feats, modes, max_modes, ppc)
    init = kinit_responsibilities(x, modes.labels, modes.n_modes)
    res = em_fit(x, init.gamma, cfg)
    if return_info:
        return res.model, {"n_modes_gbms": n_gbms, "n_modes": modes.n_modes, "em": res}
    return res.model
