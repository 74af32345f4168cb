"""Dense point-cloud reconstruction from a 4D mixture.

Positions are drawn from each component's spatial marginal; intensity is the
conditional mean of intensity given the sampled position.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Gmm, box_muller, component_rng, condition_intensity, conditional_intensity_params


@dataclass
class InferenceConfig:
    total_samples: int = 1_000_000
    batch_components: int = 1024
    rng_seed: int = 0
    # condition on the whole mixture instead of the generating component
    full_mixture: bool = False

    def __post_init__(self):
        if self.total_samples < 0:
            raise ValueError("total_samples must be >= 0")
        if self.batch_components < 1:
            raise ValueError("batch_components must be >= 1")


def allocate_samples(weights, total: int) -> np.ndarray:
    """Per-component sample counts ``round(w_k * total)``, at least 1 when ``total >= K``."""
    w = np.asarray(weights, dtype=np.float64)
    n = np.rint(w * total).astype(np.int64)
    if total >= w.shape[0]:
        n = np.maximum(n, 1)
    return n


def _sample_batch(model: Gmm, ks, counts, seed, gain, offset):
    chol = np.linalg.cholesky(model.covariances[ks, :3, :3])
    out = []
    for j, k in enumerate(ks):
        n = int(counts[j])
        if n == 0:
            continue
        u = box_muller(component_rng(seed, int(k)), 3 * n).reshape(n, 3)
        x = model.means[k, :3] + u @ chol[j].T
        i = offset[k] + x @ gain[k]
        out.append(np.column_stack([x, i]))
    return out


def reconstruct(model: Gmm, cfg: InferenceConfig | None = None, chunk: int = 4096) -> np.ndarray:
    """Sample an (N, 4) cloud of positions and intensities in [0, 1].

    Each component draws from its own counter-based stream keyed on
    ``(rng_seed, k)``, so the output does not depend on the batch size.
    """
    cfg = cfg or InferenceConfig()
    if model.dim != 4:
        raise ValueError("reconstruct expects a 4D mixture")
    counts = allocate_samples(model.weights, cfg.total_samples)
    if cfg.total_samples == 0 or counts.sum() == 0:
        return np.empty((0, 4))
    gain, offset, _ = conditional_intensity_params(model)
    parts = []
    for start in range(0, model.n_components, cfg.batch_components):
        ks = np.arange(start, min(start + cfg.batch_components, model.n_components))
        parts.extend(_sample_batch(model, ks, counts[ks], cfg.rng_seed, gain, offset))
    cloud = np.concatenate(parts)
    if cfg.full_mixture:
        for s in range(0, cloud.shape[0], chunk):
            cloud[s : s + chunk, 3], _ = condition_intensity(model, cloud[s : s + chunk, :3])
    cloud[:, 3] = np.clip(cloud[:, 3], 0.0, 1.0)
    return cloud
