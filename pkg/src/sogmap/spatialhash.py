"""Sparse grid hash from 3D positions to global mixture-component indices.

The grid has ``(nx, ny, nz)`` cells of side ``alpha`` centered on the world
origin.  A position's cell index is ``nz * (r * nx + c) + s`` with ``r``,
``c``, ``s`` the floor-quantized y, x and z coordinates.  Each component is
registered under the cells of its spatial mean and of the eigen-axis
endpoints of its 1-, 2- and 3-sigma ellipsoids.
"""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

SIGMA_LEVELS = (1.0, 2.0, 3.0)


class OutOfBoundsError(ValueError):
    pass


@dataclass(frozen=True)
class HashGridSpec:
    alpha: float = 0.2
    extents: tuple = (256, 256, 256)

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        ext = tuple(int(e) for e in self.extents)
        if len(ext) != 3 or min(ext) < 1:
            raise ValueError("extents must be three positive integers")
        object.__setattr__(self, "extents", ext)

    @property
    def origin(self) -> np.ndarray:
        return -0.5 * self.alpha * np.asarray(self.extents, dtype=np.float64)

    @property
    def n_cells(self) -> int:
        nx, ny, nz = self.extents
        return nx * ny * nz

    @classmethod
    def covering(cls, alpha: float, half_width: float) -> "HashGridSpec":
        """Cubic grid of resolution ``alpha`` spanning at least ``[-half_width, half_width]``."""
        n = int(np.ceil(2 * half_width / alpha))
        return cls(alpha, (n, n, n))


def cell_coords(p, spec: HashGridSpec) -> np.ndarray:
    """Integer ``(c, r, s)`` = floor((p - origin) / alpha) along (x, y, z)."""
    p = np.asarray(p, dtype=np.float64)
    return np.floor((p - spec.origin) / spec.alpha).astype(np.int64)


def _in_bounds(cells, spec):
    return np.all((cells >= 0) & (cells < np.asarray(spec.extents)), axis=-1)


def _linear(cells, spec):
    nx, _, nz = spec.extents
    c, r, s = cells[..., 0], cells[..., 1], cells[..., 2]
    return nz * (r * nx + c) + s


def hash_keys(pts, spec: HashGridSpec):
    """Vectorized hash: returns ``(keys, in_bounds_mask)``; out-of-bounds keys are -1."""
    cells = cell_coords(np.atleast_2d(pts), spec)
    ok = _in_bounds(cells, spec)
    keys = np.where(ok, _linear(cells, spec), -1)
    return keys, ok


def hash_key(p, spec: HashGridSpec) -> int:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (3,) or not np.all(np.isfinite(p)):
        raise ValueError("hash_key expects a finite 3-vector")
    cells = cell_coords(p, spec)
    if not _in_bounds(cells, spec):
        raise OutOfBoundsError(f"point {p.tolist()} lies outside the hash grid")
    return int(_linear(cells, spec))


def component_keys(mean, cov, sigma_levels=SIGMA_LEVELS, extra_directions: int = 0) -> np.ndarray:
    """Mean plus ``mean +/- s * sqrt(lambda_d) * v_d`` for each eigenpair and sigma level.

    ``mean`` and ``cov`` may be the 4D parameters; only the spatial block is
    used.  With the default three sigma levels this yields 19 points.
    ``extra_directions`` adds that many evenly spaced points per ellipsoid
    on the great circle spanned by the two major axes.
    """
    mu = np.asarray(mean, dtype=np.float64)[:3]
    sxx = np.asarray(cov, dtype=np.float64)[:3, :3]
    lam, vec = np.linalg.eigh(sxx)
    axes = vec * np.sqrt(np.maximum(lam, 0.0))  # columns are scaled principal axes
    offsets = [axes.T, -axes.T]
    if extra_directions:
        ang = np.linspace(0.0, 2 * np.pi, extra_directions, endpoint=False)
        offsets.append(np.outer(np.cos(ang), axes[:, 2]) + np.outer(np.sin(ang), axes[:, 1]))
    unit = np.vstack(offsets)
    keys = [mu[None, :]] + [mu + s * unit for s in sigma_levels]
    return np.vstack(keys)


@dataclass
class SpatialHashTable:
    """Cell index -> array of component indices.

    Single writer, many readers: ``insert_component`` takes the write lock;
    queries only read and may run concurrently with one another.
    """

    spec: HashGridSpec = field(default_factory=HashGridSpec)
    extra_directions: int = 0
    table: dict = field(default_factory=dict)
    n_out_of_bounds: int = 0
    n_components: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __len__(self):
        return len(self.table)

    def insert_component(self, index: int, mean, cov) -> int:
        """Register component ``index``; returns the number of keys skipped as out of bounds."""
        keys, ok = hash_keys(component_keys(mean, cov, extra_directions=self.extra_directions), self.spec)
        skipped = int((~ok).sum())
        with self._lock:
            for key in np.unique(keys[ok]):
                key = int(key)
                cur = self.table.get(key)
                if cur is None:
                    self.table[key] = np.array([index], dtype=np.int64)
                elif index not in cur:
                    self.table[key] = np.append(cur, np.int64(index))
            self.n_out_of_bounds += skipped
            self.n_components = max(self.n_components, index + 1)
        if skipped:
            log.debug("component %d: %d hash keys outside the grid", index, skipped)
        return skipped

    def insert_model(self, model, start: int = 0) -> int:
        """Insert every component of ``model`` with global indices ``start + j``."""
        skipped = 0
        for j in range(model.n_components):
            skipped += self.insert_component(start + j, model.means[j], model.covariances[j])
        return skipped

    def lookup(self, key: int) -> np.ndarray:
        return self.table.get(int(key), np.empty(0, dtype=np.int64))

    def query_submap(self, pts) -> np.ndarray:
        """Sorted unique component indices stored in the cells hit by ``pts``."""
        pts = np.asarray(pts, dtype=np.float64)
        if pts.size == 0:
            return np.empty(0, dtype=np.int64)
        keys, ok = hash_keys(pts[:, :3], self.spec)
        found = [self.table[k] for k in np.unique(keys[ok]).tolist() if k in self.table]
        if not found:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(found))

    def as_sets(self) -> dict:
        return {k: set(v.tolist()) for k, v in self.table.items()}

    @classmethod
    def from_model(cls, model, spec: HashGridSpec | None = None, extra_directions: int = 0):
        """Rebuild the table for a loaded model (the table itself is never serialized)."""
        table = cls(spec or HashGridSpec(), extra_directions)
        table.insert_model(model)
        return table
