"""Incremental mapping: novelty filtering against the global model, local
fitting, merging and hash maintenance.

A frame's points are scored by the log-likelihood of their positions under
the spatial marginal of the global model, restricted to the components the
hash table returns for the frame.  Points scoring below ``phi`` are novel;
once enough novel points have accumulated a local model is fit to them and
appended to the global model.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import Gmm, inverse_lower, marginalize_spatial, mixture_log_likelihood
from .sogmm import SogmmConfig, fit_sogmm
from .spatialhash import HashGridSpec, SpatialHashTable

log = logging.getLogger(__name__)


@dataclass
class MapperConfig:
    # None: calibrate on the first fitted frame at phi_quantile, then freeze
    phi: float | None = None
    phi_quantile: float = 0.02
    min_relevant_points: int = 640
    sogmm: SogmmConfig = field(default_factory=SogmmConfig)
    hash: HashGridSpec = field(default_factory=HashGridSpec)
    use_marginal: bool = True
    use_submap: bool = True
    cache_cap: int = 1_000_000

    def __post_init__(self):
        if self.min_relevant_points < 1:
            raise ValueError("min_relevant_points must be >= 1")
        if not 0.0 <= self.phi_quantile <= 1.0:
            raise ValueError("phi_quantile must lie in [0, 1]")
        if self.cache_cap < 1:
            raise ValueError("cache_cap must be >= 1")


@dataclass
class FrameReport:
    frame: int
    n_points: int
    n_relevant: int
    n_cached: int
    n_submap: int
    n_components: int
    branch: str  # "fit", "cache" or "error"
    n_local: int = 0
    t_relevant: float = 0.0
    t_fit: float = 0.0
    t_merge: float = 0.0
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def merge_models(global_model: Gmm | None, local: Gmm) -> Gmm:
    """Append ``local`` to ``global_model``, reweighting both by support count."""
    if global_model is None:
        return Gmm(local.weights.copy(), local.means.copy(), local.covariances.copy(),
                   local.support_count, _check=False)
    ng, nl = global_model.support_count, local.support_count
    if ng + nl == 0:
        # no support information: weigh the two models by component count
        ng, nl = global_model.n_components, local.n_components
    total = ng + nl
    weights = np.concatenate([global_model.weights * (ng / total), local.weights * (nl / total)])
    weights /= weights.sum()
    return Gmm(
        weights,
        np.concatenate([global_model.means, local.means]),
        np.concatenate([global_model.covariances, local.covariances]),
        global_model.support_count + local.support_count,
        _check=False,
    )


def frame_log_likelihood(model: Gmm, frame, use_marginal: bool = True, subset=None) -> np.ndarray:
    """Score of every frame point under the model (spatial marginal or full 4D)."""
    frame = np.asarray(frame, dtype=np.float64)
    if use_marginal:
        m = marginalize_spatial(model)
        pts = frame[:, :3]
    else:
        m = model
        pts = frame[:, :4]
    idx = slice(None) if subset is None else np.asarray(subset, dtype=np.int64)
    return mixture_log_likelihood(pts, m.log_weights[idx], m.means[idx], m.precision_chol[idx])


def calibrate_phi(model: Gmm, frame, quantile: float = 0.02, use_marginal: bool = True) -> float:
    """Threshold below which a ``quantile`` fraction of ``frame`` scores.

    At ``quantile == 1`` the maximum is nudged upward so that every point
    counts as novel.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[0] == 0:
        raise ValueError("cannot calibrate on an empty frame")
    if not 0.0 <= quantile <= 1.0:
        raise ValueError("quantile must lie in [0, 1]")
    ll = frame_log_likelihood(model, frame, use_marginal)
    phi = float(np.quantile(ll, quantile))
    if quantile >= 1.0:
        phi = float(np.nextafter(phi, np.inf))
    return phi


class Mapper:
    """Mutable mapping state.  ``process_frame`` calls must be serialized."""

    def __init__(self, cfg: MapperConfig | None = None):
        self.cfg = cfg or MapperConfig()
        self.global_model: Gmm | None = None
        self.table = SpatialHashTable(self.cfg.hash)
        self.cache = np.empty((0, 4))
        self.cache_depth = np.empty(0)
        self.frame_counter = 0
        self.reports: list[FrameReport] = []
        self.phi = self.cfg.phi
        # precision factors kept alongside the append-only model
        self._prec3 = np.empty((0, 3, 3))
        self._prec4 = np.empty((0, 4, 4))

    @property
    def n_components(self) -> int:
        return 0 if self.global_model is None else self.global_model.n_components

    # relevance ---------------------------------------------------------------

    def score(self, frame, use_submap=None, use_marginal=None):
        """Log-likelihood scores for ``frame``; returns ``(scores, submap)``.

        ``scores`` is None when every point is novel by rule (no global model
        yet, or an empty submap).  ``submap`` is the index set used (all of K
        when the submap restriction is off).
        """
        use_submap = self.cfg.use_submap if use_submap is None else use_submap
        use_marginal = self.cfg.use_marginal if use_marginal is None else use_marginal
        frame = np.asarray(frame, dtype=np.float64)
        g = self.global_model
        if g is None:
            return None, np.empty(0, dtype=np.int64)
        if use_submap:
            idx = self.table.query_submap(frame[:, :3])
            if idx.size == 0:
                return None, idx
        else:
            idx = np.arange(g.n_components)
        return self.score_indices(frame, idx, use_marginal), idx

    def score_indices(self, frame, idx, use_marginal=None) -> np.ndarray:
        """Log-likelihood of ``frame`` under the global components ``idx`` only."""
        use_marginal = self.cfg.use_marginal if use_marginal is None else use_marginal
        g = self.global_model
        frame = np.asarray(frame, dtype=np.float64)
        if use_marginal:
            pts, means, prec = frame[:, :3], g.means[idx, :3], self._prec3[idx]
        else:
            pts, means, prec = frame[:, :4], g.means[idx], self._prec4[idx]
        return mixture_log_likelihood(pts, g.log_weights[idx], means, prec)

    def relevant_mask(self, frame, use_submap=None, use_marginal=None):
        """Boolean novelty mask and the submap used; see :meth:`score`."""
        scores, idx = self.score(frame, use_submap, use_marginal)
        n = np.asarray(frame).shape[0]
        if scores is None:
            return np.ones(n, dtype=bool), idx
        if self.phi is None:
            raise RuntimeError("phi is not set and no frame has been fit yet")
        return scores < self.phi, idx

    def relevant_subset(self, frame):
        mask, _ = self.relevant_mask(frame)
        return np.asarray(frame)[mask]

    # model updates -----------------------------------------------------------

    def merge_global(self, local: Gmm) -> None:
        """Append ``local``'s components to the global model and hash them."""
        start = self.n_components
        self.global_model = merge_models(self.global_model, local)
        spatial = local.covariances[:, :3, :3]
        self._prec3 = np.concatenate([self._prec3, inverse_lower(np.linalg.cholesky(spatial))])
        self._prec4 = np.concatenate([self._prec4, local.precision_chol])
        self.table.insert_model(local, start)

    def process_frame(self, frame, depth) -> FrameReport:
        """Run one frame through relevance filtering, caching and fitting."""
        frame = np.asarray(frame, dtype=np.float64)
        depth = np.asarray(depth, dtype=np.float64)
        fid = self.frame_counter
        self.frame_counter += 1

        t0 = time.perf_counter()
        mask, idx = self.relevant_mask(frame)
        t_rel = time.perf_counter() - t0
        n_rel = int(mask.sum())

        pts = np.concatenate([self.cache, frame[mask]])
        pts_depth = np.concatenate([self.cache_depth, depth[mask]])
        report = FrameReport(fid, frame.shape[0], n_rel, 0, int(idx.size), self.n_components,
                             "cache", t_relevant=t_rel)

        if pts.shape[0] > self.cfg.min_relevant_points or pts.shape[0] >= self.cfg.cache_cap:
            t1 = time.perf_counter()
            try:
                local = fit_sogmm(pts, pts_depth, self.cfg.sogmm)
            except (ValueError, np.linalg.LinAlgError) as exc:
                log.warning("frame %d: local fit failed: %s", fid, exc)
                report.branch = "error"
                report.error = str(exc)
                report.t_fit = time.perf_counter() - t1
            else:
                report.t_fit = time.perf_counter() - t1
                t2 = time.perf_counter()
                first = self.global_model is None
                self.merge_global(local)
                if first and self.phi is None:
                    self.phi = calibrate_phi(self.global_model, pts, self.cfg.phi_quantile,
                                             self.cfg.use_marginal)
                report.t_merge = time.perf_counter() - t2
                report.branch = "fit"
                report.n_local = local.n_components
                report.n_components = self.n_components
                pts, pts_depth = pts[:0], pts_depth[:0]

        self.cache, self.cache_depth = pts, pts_depth
        report.n_cached = int(pts.shape[0])
        self.reports.append(report)
        return report

    def run(self, frames):
        """Process ``(cloud, depth)`` pairs in order; returns the reports."""
        return [self.process_frame(c, d) for c, d in frames]
