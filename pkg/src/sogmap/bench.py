"""Relevance-filter timing: full global model versus hash-retrieved submap.

One mapper is driven over the sequence.  Before each frame is processed
both evaluations run on the same state, so the timings and the relevance
masks are paired.  Additional hash grids at other resolutions are kept in
step with the global model to record the submap size each would return.
"""
from __future__ import annotations

import gc
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .mapper import Mapper, MapperConfig
from .spatialhash import HashGridSpec, SpatialHashTable


@dataclass
class BenchRow:
    frame: int
    n_components: int
    n_submap: int
    t_full: float
    t_submap: float
    agreement: float
    cum_full: float
    cum_submap: float
    ratio: float | None
    submap_by_alpha: dict = field(default_factory=dict)
    t_submap_by_alpha: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def best_time(fn, repeats: int = 3):
    """Minimum wall time over ``repeats`` calls and the last result.

    The garbage collector is paused while timing so a collection pass does
    not land inside one of the measured calls.
    """
    best, out = np.inf, None
    gc.collect()
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(repeats):
            t0 = time.perf_counter()
            out = fn()
            best = min(best, time.perf_counter() - t0)
    finally:
        if was_enabled:
            gc.enable()
    return best, out


def run_bench(frames, cfg: MapperConfig | None = None, alphas=(), half_width: float = 25.6,
              repeats: int = 3, on_row=None) -> list[BenchRow]:
    """Drive a mapper over ``(cloud, depth)`` frames and time both relevance paths.

    The submap timing includes the hash lookup.  Frames seen before the
    global model exists produce no row.  ``alphas`` adds grids of those
    resolutions covering ``[-half_width, half_width]`` on every axis.
    """
    mapper = Mapper(cfg)
    tables = {float(a): SpatialHashTable(HashGridSpec.covering(a, half_width)) for a in alphas}
    rows: list[BenchRow] = []
    cum_full = cum_sub = 0.0
    for k, (cloud, depth) in enumerate(frames):
        cloud = np.asarray(cloud, dtype=np.float64)
        if mapper.global_model is not None:
            phi = mapper.phi
            t_full, s_full = best_time(lambda: mapper.score(cloud, use_submap=False)[0], repeats)
            t_sub, (s_sub, idx) = best_time(lambda: mapper.score(cloud, use_submap=True), repeats)
            full_mask = s_full < phi
            sub_mask = np.ones_like(full_mask) if s_sub is None else s_sub < phi
            cum_full += t_full
            cum_sub += t_sub
            by_alpha, t_by_alpha = {}, {}
            for a, table in tables.items():
                def query(table=table):
                    b = table.query_submap(cloud[:, :3])
                    if b.size:
                        mapper.score_indices(cloud, b)
                    return b
                t_a, b = best_time(query, repeats)
                by_alpha[str(a)] = int(b.size)
                t_by_alpha[str(a)] = t_a
            row = BenchRow(k, mapper.n_components, int(idx.size), t_full, t_sub,
                           float(np.mean(full_mask == sub_mask)), cum_full, cum_sub,
                           cum_full / cum_sub if cum_sub > 0 else None, by_alpha, t_by_alpha)
            rows.append(row)
            if on_row is not None:
                on_row(row)
        start = mapper.n_components
        mapper.process_frame(cloud, depth)
        g = mapper.global_model
        for table in tables.values():
            for j in range(start, mapper.n_components):
                table.insert_component(j, g.means[j], g.covariances[j])
    return rows


def summarize(rows, gate: float = 20.0) -> dict:
    """Final cumulative ratio, whether it never decreased, and the first frame
    where ``|K| >= gate * mean|B|`` holds."""
    if not rows:
        return {"frames": 0}
    ratios = [r.ratio for r in rows]
    mean_b = float(np.mean([r.n_submap for r in rows]))
    gated = [r for r in rows if r.n_components >= gate * mean_b]
    out = {
        "frames": len(rows),
        "final_ratio": ratios[-1],
        "ratio_nondecreasing": bool(all(b >= a for a, b in zip(ratios, ratios[1:]))),
        "mean_submap": mean_b,
        "final_components": rows[-1].n_components,
        "gate_frame": gated[0].frame if gated else None,
        "min_agreement": float(min(r.agreement for r in rows)),
        "mean_agreement": float(np.mean([r.agreement for r in rows])),
    }
    if rows[0].submap_by_alpha:
        out["mean_submap_by_alpha"] = {
            a: float(np.mean([r.submap_by_alpha[a] for r in rows])) for a in rows[0].submap_by_alpha
        }
    return out


def format_bench(rows) -> str:
    lines = [f"{'frame':>5} {'|K|':>6} {'|B|':>5} {'t_full':>9} {'t_sub':>9} {'agree':>6} {'ratio':>7}"]
    for r in rows:
        ratio = "-" if r.ratio is None else f"{r.ratio:.2f}"
        lines.append(f"{r.frame:>5} {r.n_components:>6} {r.n_submap:>5} {r.t_full:>9.4f} "
                     f"{r.t_submap:>9.4f} {r.agreement:>6.3f} {ratio:>7}")
    return "\n".join(lines)
