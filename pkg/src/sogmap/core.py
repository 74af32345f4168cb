"""Gaussian and Gaussian-mixture numerics shared by the rest of the package.

Mixtures are stored as stacked arrays (weights ``(K,)``, means ``(K, D)``,
covariances ``(K, D, D)``) with ``D`` equal to 3 (spatial) or 4 (spatial +
intensity).  Log-densities use the Cholesky form

    ln N(x; mu, S) = -1/2 (D ln 2pi + |P (x - mu)|^2) + sum ln diag(P)

with ``S = L L^T`` and ``P = L^-1``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import solve_triangular

LOG_2PI = math.log(2.0 * math.pi)

#: Added to every covariance diagonal before factorization (m^2 for spatial axes).
COV_REG = 1e-6

# Below this the direct-form density underflows to zero in float64.
_LOG_TINY = math.log(np.finfo(np.float64).tiny)

_num_threads = 1


class NoSupportError(ValueError):
    """Raised when a query point carries no probability mass under the model."""


def set_num_threads(n: int) -> None:
    """Set the worker count used by batch evaluations (results do not depend on it)."""
    global _num_threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _num_threads = int(n)


def get_num_threads() -> int:
    return _num_threads


@dataclass(frozen=True)
class Component:
    weight: float
    mean: np.ndarray
    covariance: np.ndarray


@dataclass(frozen=True, eq=False)
class Gmm:
    """Weighted mixture of full-covariance Gaussians in 3 or 4 dimensions.

    The same class serves both the 4D (x, y, z, intensity) models and their
    3D spatial marginals; ``dim`` tells them apart.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    support_count: int = 0
    _check: bool = field(default=True, repr=False)

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64).reshape(-1)
        mu = np.ascontiguousarray(self.means, dtype=np.float64)
        cov = np.ascontiguousarray(self.covariances, dtype=np.float64)
        if mu.ndim == 1:
            mu = mu[None, :]
        if cov.ndim == 2:
            cov = cov[None, :, :]
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)
        if self._check:
            self.validate()

    def validate(self) -> None:
        k = self.weights.shape[0]
        if k < 1:
            raise ValueError("a mixture needs at least one component")
        d = self.means.shape[1]
        if d not in (3, 4):
            raise ValueError(f"only 3D and 4D mixtures are supported, got D={d}")
        if self.means.shape != (k, d) or self.covariances.shape != (k, d, d):
            raise ValueError(
                f"inconsistent shapes: weights {self.weights.shape}, "
                f"means {self.means.shape}, covariances {self.covariances.shape}"
            )
        if not (np.all(np.isfinite(self.means)) and np.all(np.isfinite(self.covariances))):
            raise ValueError("non-finite mixture parameters")
        if np.any(self.weights <= 0) or np.any(self.weights > 1 + 1e-12):
            raise ValueError("weights must lie in (0, 1]")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {self.weights.sum()!r}, expected 1")
        asym = np.abs(self.covariances - self.covariances.transpose(0, 2, 1)).max()
        if asym > 1e-12 * max(1.0, np.abs(self.covariances).max()):
            raise ValueError("covariances must be symmetric")
        if self.support_count < 0:
            raise ValueError("support_count must be nonnegative")

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def __len__(self) -> int:
        return self.n_components

    def component(self, k: int) -> Component:
        return Component(float(self.weights[k]), self.means[k].copy(), self.covariances[k].copy())

    @cached_property
    def chol(self) -> np.ndarray:
        """Lower Cholesky factors of the covariances, shape (K, D, D)."""
        return np.linalg.cholesky(self.covariances)

    @cached_property
    def precision_chol(self) -> np.ndarray:
        """``P = L^-1`` for every component, shape (K, D, D), lower triangular."""
        return inverse_lower(self.chol)

    @cached_property
    def log_weights(self) -> np.ndarray:
        return np.log(self.weights)


def regularize(cov: np.ndarray, eps: float = COV_REG) -> np.ndarray:
    """Return ``cov + eps * I`` (works on a single matrix or a stack), symmetrized."""
    cov = np.asarray(cov, dtype=np.float64)
    out = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    d = cov.shape[-1]
    out = out + eps * np.eye(d)
    return out


def inverse_lower(chol: np.ndarray) -> np.ndarray:
    """Invert a stack of lower-triangular factors."""
    chol = np.asarray(chol, dtype=np.float64)
    if chol.ndim == 2:
        return solve_triangular(chol, np.eye(chol.shape[0]), lower=True)
    eye = np.eye(chol.shape[-1])
    return np.stack([solve_triangular(c, eye, lower=True) for c in chol])


def gaussian_log_density(x, mean, chol_lower) -> np.ndarray | float:
    """Log-density of ``N(mean, L L^T)`` at ``x`` using the Cholesky factor ``L``.

    ``x`` may be a single D-vector (returns a float) or an (N, D) array.
    """
    x = np.asarray(x, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    chol_lower = np.asarray(chol_lower, dtype=np.float64)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(mean)) and np.all(np.isfinite(chol_lower))):
        raise ValueError("non-finite input to gaussian_log_density")
    diag = np.diag(chol_lower)
    if np.any(diag <= 0):
        raise ValueError("Cholesky factor must have a strictly positive diagonal")
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    d = mean.shape[0]
    # solving L y = (x - mean) gives y = P (x - mean)
    y = solve_triangular(chol_lower, (xs - mean).T, lower=True)
    out = -0.5 * (d * LOG_2PI + np.sum(y * y, axis=0)) - np.sum(np.log(diag))
    return float(out[0]) if single else out


def _component_log_densities(x, means, prec_chol, log_det_prec):
    """(N, Kc) matrix of ln N(x_n; mean_k, S_k) from precomputed P_k.

    All ``P_k (x - mean_k)`` are produced by one matrix product of the points
    against the horizontally stacked ``P_k^T`` blocks.
    """
    n, d = x.shape
    kc = means.shape[0]
    # column i * kc + k holds row i of P_k, so axis sums become block adds
    stacked = np.ascontiguousarray(prec_chol.transpose(2, 1, 0)).reshape(d, d * kc)
    y = x @ stacked
    y -= np.einsum("kij,kj->ik", prec_chol, means).reshape(-1)
    y *= y
    maha = y[:, :kc].copy()
    for i in range(1, d):
        maha += y[:, i * kc : (i + 1) * kc]
    maha += d * LOG_2PI
    maha *= -0.5
    maha += log_det_prec
    return maha


def logsumexp_rows(a: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp of a 2D array (rows that are all -inf give -inf)."""
    peak = a.max(axis=1)
    safe = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(a - safe[:, None]).sum(axis=1)) + safe


def component_log_densities(x, model: Gmm, subset=None, chunk: int = 256) -> np.ndarray:
    """Per-component log-densities (without weights), shape (N, |subset|)."""
    x = np.asarray(x, dtype=np.float64)
    idx = np.arange(model.n_components) if subset is None else np.asarray(subset, dtype=np.int64)
    prec = model.precision_chol[idx]
    means = model.means[idx]
    logdet = np.log(np.diagonal(prec, axis1=1, axis2=2)).sum(axis=1)
    out = np.empty((x.shape[0], idx.size))
    chunk = max(1, min(chunk, 4_000_000 // max(1, x.shape[0] * model.dim)))
    for s in range(0, idx.size, chunk):
        e = min(s + chunk, idx.size)
        out[:, s:e] = _component_log_densities(x, means[s:e], prec[s:e], logdet[s:e])
    return out


def _point_chunks(n: int, size: int):
    return [(s, min(s + size, n)) for s in range(0, n, size)]


def mixture_log_likelihood(
    x,
    log_weights: np.ndarray,
    means: np.ndarray,
    prec_chol: np.ndarray,
    comp_chunk: int = 256,
    point_chunk: int = 4096,
) -> np.ndarray:
    """Log-sum-exp mixture likelihood from precomputed precision factors.

    This is the hot path of relevance filtering; callers that keep the
    factors around (the mapper) skip refactorizing on every frame.
    Component chunks are reduced in a fixed order so the result does not
    depend on the thread count.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    k = means.shape[0]
    if k == 0:
        raise ValueError("empty component subset")
    out = np.empty(n)
    if n == 0:
        return out
    logdet = np.log(np.diagonal(prec_chol, axis1=1, axis2=2)).sum(axis=1)
    # keep the (N, Kc * D) temporaries to a few tens of MB
    comp_chunk = max(1, min(comp_chunk, 1_000_000 // max(1, min(n, point_chunk))))

    def run(span):
        s, e = span
        xs = x[s:e]
        acc = None
        for c0 in range(0, k, comp_chunk):
            c1 = min(c0 + comp_chunk, k)
            lp = _component_log_densities(xs, means[c0:c1], prec_chol[c0:c1], logdet[c0:c1])
            lp += log_weights[c0:c1]
            part = logsumexp_rows(lp)
            acc = part if acc is None else np.logaddexp(acc, part)
        out[s:e] = acc

    spans = _point_chunks(n, point_chunk)
    if _num_threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(_num_threads) as pool:
            list(pool.map(run, spans))
    else:
        for span in spans:
            run(span)
    return out


def gmm_log_likelihood(pts, model: Gmm, subset=None) -> np.ndarray:
    """Per-point ``ln sum_k w_k N(x_n; mu_k, S_k)``, optionally over ``subset`` only.

    The subset weights are used as stored (no renormalization), matching the
    restricted sum used for relevance filtering.
    """
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.shape[1] != model.dim:
        raise ValueError(f"points have dimension {pts.shape[1]}, model has {model.dim}")
    if subset is None:
        idx = slice(None)
    else:
        idx = np.asarray(subset, dtype=np.int64).reshape(-1)
        if idx.size == 0:
            raise ValueError("empty component subset")
        if idx.min() < 0 or idx.max() >= model.n_components:
            raise IndexError("subset index out of range")
    if pts.shape[0] == 0:
        return np.empty(0)
    return mixture_log_likelihood(
        pts, model.log_weights[idx], model.means[idx], model.precision_chol[idx]
    )


def marginalize_spatial(model: Gmm) -> Gmm:
    """Drop the intensity dimension of a 4D mixture (weights unchanged)."""
    if model.dim != 4:
        raise ValueError("marginalize_spatial expects a 4D mixture")
    return Gmm(
        model.weights.copy(),
        model.means[:, :3].copy(),
        model.covariances[:, :3, :3].copy(),
        model.support_count,
        _check=False,
    )


def conditional_intensity_params(model: Gmm):
    """Per-component linear regressors of intensity on position.

    Returns ``(gain, offset, var)`` such that for component k,
    ``E[i | x] = offset_k + gain_k . x`` and ``Var[i | x] = var_k``.
    """
    sxx = model.covariances[:, :3, :3]
    sxi = model.covariances[:, :3, 3]
    gain = np.linalg.solve(sxx, sxi[:, :, None])[:, :, 0]  # (K, 3) = Sxx^-1 Sxi
    offset = model.means[:, 3] - np.einsum("kd,kd->k", gain, model.means[:, :3])
    var = model.covariances[:, 3, 3] - np.einsum("kd,kd->k", gain, sxi)
    return gain, offset, np.maximum(var, 0.0)


def condition_intensity(model: Gmm, x, return_weights: bool = False):
    """Mixture-conditional mean and variance of intensity given position.

    ``x`` is a 3-vector or an (N, 3) array.  The mean is clamped to [0, 1];
    the variance is the unclamped mixture variance.
    """
    if model.dim != 4:
        raise ValueError("condition_intensity expects a 4D mixture")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    if not np.all(np.isfinite(xs)):
        raise ValueError("non-finite query position")
    marg = marginalize_spatial(model)
    logp = component_log_densities(xs, marg) + marg.log_weights
    peak = logp.max(axis=1)
    if np.any(peak < _LOG_TINY):
        raise NoSupportError("query position has no support under the model")
    w = np.exp(logp - peak[:, None])
    w /= w.sum(axis=1, keepdims=True)
    gain, offset, var = conditional_intensity_params(model)
    cmeans = xs @ gain.T + offset  # (N, K)
    mean = np.sum(w * cmeans, axis=1)
    variance = np.sum(w * (var + cmeans**2), axis=1) - mean**2
    variance = np.maximum(variance, 0.0)
    mean = np.clip(mean, 0.0, 1.0)
    if single:
        res = (float(mean[0]), float(variance[0]))
        return (*res, w[0]) if return_weights else res
    return (mean, variance, w) if return_weights else (mean, variance)


def component_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Counter-based (Philox) stream keyed on ``(seed, index)``.

    Streams for different indices are independent, so per-component sampling
    gives the same numbers regardless of batching or scheduling.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(index)])
    return np.random.Generator(np.random.Philox(ss))


def box_muller(rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` standard-normal variates from uniform pairs via Box-Muller."""
    if size <= 0:
        return np.empty(0)
    m = (size + 1) // 2
    u1 = 1.0 - rng.random(m)  # (0, 1], keeps the log finite
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * math.pi * u2
    z = np.empty(2 * m)
    z[0::2] = r * np.cos(theta)
    z[1::2] = r * np.sin(theta)
    return z[:size]


def sample_gaussian(mean, cov_or_chol, n: int, rng_seed: int, index: int = 0, is_chol: bool = False):
    """``n`` draws of ``mean + L u`` with Box-Muller normals ``u``."""
    mean = np.asarray(mean, dtype=np.float64)
    d = mean.shape[0]
    if n <= 0:
        return np.empty((0, d))
    chol = np.asarray(cov_or_chol, dtype=np.float64)
    if not is_chol:
        chol = np.linalg.cholesky(chol)
    u = box_muller(component_rng(rng_seed, index), n * d).reshape(n, d)
    return mean + u @ chol.T


def sample_component(component: Component, n: int, rng_seed: int, index: int = 0) -> np.ndarray:
    """Draw ``n`` points from one mixture component (3D or 4D)."""
    return sample_gaussian(component.mean, component.covariance, n, rng_seed, index)
