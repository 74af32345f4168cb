"""Reconstruction quality and storage measures.

MRE, precision and PSNR pair every predicted point with its nearest
ground-truth point; recall pairs every ground-truth point with its nearest
prediction.  PSNR uses a peak of 1.0 since intensities lie in [0, 1].
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import Gmm
from .io import model_file_size

PSNR_CAP = 99.0


@dataclass
class ReconstructionReport:
    mre: float
    precision: float
    recall: float
    psnr: float
    model_bytes: int | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def build_ground_truth(clouds, voxel: float = 0.01) -> np.ndarray:
    """Concatenate (N, 4) clouds and keep the centroid of each occupied voxel."""
    if voxel <= 0:
        raise ValueError("voxel must be positive")
    parts = [np.asarray(c, dtype=np.float64) for c in clouds]
    parts = [p for p in parts if p.shape[0]]
    if not parts:
        raise ValueError("no points to build ground truth from")
    pts = np.concatenate(parts)
    cells = np.floor(pts[:, :3] / voxel).astype(np.int64)
    _, inv, counts = np.unique(cells, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    out = np.empty((counts.shape[0], pts.shape[1]))
    for j in range(pts.shape[1]):
        out[:, j] = np.bincount(inv, weights=pts[:, j], minlength=counts.shape[0]) / counts
    return out


def _nearest(query, ref):
    tree = cKDTree(ref[:, :3])
    return tree.query(query[:, :3], k=1)


def psnr_from_mse(mse: float) -> float:
    if mse <= 0:
        return PSNR_CAP
    return float(min(-10.0 * np.log10(mse), PSNR_CAP))


def compute_metrics(pred, gt, dist_thresh: float = 0.01) -> ReconstructionReport:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape[0] == 0 or gt.shape[0] == 0:
        raise ValueError("metrics need two non-empty clouds")
    d_pg, i_pg = _nearest(pred, gt)
    d_gp, _ = _nearest(gt, pred)
    mse = float(np.mean((pred[:, 3] - gt[i_pg, 3]) ** 2))
    return ReconstructionReport(
        mre=float(d_pg.mean()),
        precision=float(np.mean(d_pg <= dist_thresh)),
        recall=float(np.mean(d_gp <= dist_thresh)),
        psnr=psnr_from_mse(mse),
    )


def model_bytes(model: Gmm | int) -> int:
    """Serialized size: header plus 15 single-precision floats per component."""
    k = model if isinstance(model, (int, np.integer)) else model.n_components
    return model_file_size(int(k))


TABLE_COLUMNS = ("Method", "Param.", "MRE", "Prec.", "Rec.", "PSNR", "Mem.")


def format_table(rows) -> str:
    """Aligned text table from ``(method, param, report)`` triples.

    MRE in meters, PSNR in dB, Mem. in MB (2^20 bytes); a missing model size
    prints as ``-``.
    """
    cells = [list(TABLE_COLUMNS)]
    for method, param, r in rows:
        mem = "-" if r.model_bytes is None else f"{r.model_bytes / 2**20:.3f}"
        cells.append([str(method), str(param), f"{r.mre:.4f}", f"{r.precision:.3f}",
                      f"{r.recall:.3f}", f"{r.psnr:.2f}", mem])
    widths = [max(len(row[j]) for row in cells) for j in range(len(TABLE_COLUMNS))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
