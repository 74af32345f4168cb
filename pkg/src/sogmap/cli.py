"""Command-line frontend: ``python -m sogmap <command>``.

Every command reads an optional JSON config (``--config``); flags given on
the command line override the file, which overrides the defaults.  Frame
and bench reports are written as one JSON object per line.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import io, synth
from .bench import format_bench, run_bench, summarize
from .config import RunConfig, with_overrides
from .core import set_num_threads
from .infer import reconstruct
from .mapper import Mapper
from .metrics import build_ground_truth, compute_metrics, format_table, model_bytes

log = logging.getLogger("sogmap")


# flag -> dotted config path
_OVERRIDES = {
    "bandwidth": "mapper.sogmm.bandwidth",
    "alpha": "mapper.hash.alpha",
    "phi": "mapper.phi",
    "phi_quantile": "mapper.phi_quantile",
    "min_relevant": "mapper.min_relevant_points",
    "submap": "mapper.use_submap",
    "marginal": "mapper.use_marginal",
    "samples": "inference.total_samples",
    "seed": "inference.rng_seed",
    "batch": "inference.batch_components",
    "full_mixture": "inference.full_mixture",
    "voxel": "eval.gt_voxel",
    "dist_thresh": "eval.dist_thresh",
    "gt_decimation": "eval.gt_decimation",
    "alphas": "bench.alphas",
    "repeats": "bench.repeats",
    "decimation": "decimation",
    "threads": "threads",
    "manifest": "manifest",
    "model": "model",
    "output": "output",
}


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {path: getattr(args, name) for name, path in _OVERRIDES.items() if hasattr(args, name)}
    cfg = with_overrides(cfg, overrides)
    set_num_threads(cfg.threads)
    return cfg


def _require(value, what):
    if value is None:
        raise SystemExit(f"error: {what} is required (flag or config file)")
    return value


def _report_stream(path):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w"), True


# commands --------------------------------------------------------------------

def cmd_init_config(args) -> int:
    text = RunConfig().to_json()
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_map(args) -> int:
    cfg = load_config(args)
    manifest = io.read_manifest(_require(cfg.manifest, "--manifest"))
    out_model = _require(cfg.model, "--model")
    mapper = Mapper(cfg.mapper)
    stream, close = _report_stream(args.reports)
    try:
        for cloud, depth, _ in io.iter_manifest_frames(manifest, cfg.decimation):
            report = mapper.process_frame(cloud, depth)
            stream.write(report.to_json() + "\n")
            stream.flush()
    finally:
        if close:
            stream.close()
    if mapper.global_model is None:
        log.error("no frame produced a model (all points stayed cached)")
        return 1
    io.save_model(mapper.global_model, out_model)
    log.info("wrote %s: %d components, %d bytes", out_model, mapper.n_components,
             model_bytes(mapper.global_model))
    return 0


def cmd_reconstruct(args) -> int:
    cfg = load_config(args)
    model = io.load_model(_require(cfg.model, "--model"))
    cloud = reconstruct(model, cfg.inference)
    io.export_ply(cloud, _require(cfg.output, "--output"))
    log.info("wrote %s: %d points", cfg.output, cloud.shape[0])
    return 0


def _load_prediction(path, cfg: RunConfig):
    """A PLY file is used as-is; a model file is densely sampled first."""
    path = Path(path)
    if path.suffix.lower() == ".ply":
        return io.read_ply(path), None
    model = io.load_model(path)
    return reconstruct(model, cfg.inference), model


def cmd_eval(args) -> int:
    cfg = load_config(args)
    manifest = io.read_manifest(_require(cfg.manifest, "--manifest"))
    pred, model = _load_prediction(_require(args.pred, "--pred"), cfg)
    clouds = [c for c, _, _ in io.iter_manifest_frames(manifest, cfg.eval.gt_decimation)]
    gt = build_ground_truth(clouds, cfg.eval.gt_voxel)
    report = compute_metrics(pred, gt, cfg.eval.dist_thresh)
    if model is not None:
        report.model_bytes = model_bytes(model)
    if args.json:
        print(report.to_json())
    else:
        param = f"sigma={cfg.mapper.sogmm.bandwidth:g}" if model is not None else "-"
        print(format_table([(args.method, param, report)]))
    return 0


def cmd_bench(args) -> int:
    cfg = load_config(args)
    manifest = io.read_manifest(_require(cfg.manifest, "--manifest"))
    frames = ((c, d) for c, d, _ in io.iter_manifest_frames(manifest, cfg.decimation))
    stream, close = _report_stream(args.reports)
    try:
        rows = run_bench(frames, cfg.mapper, cfg.bench.alphas, cfg.bench.half_width, cfg.bench.repeats,
                         on_row=lambda r: (stream.write(r.to_json() + "\n"), stream.flush()))
    finally:
        if close:
            stream.close()
    print(format_bench(rows), file=sys.stderr)
    print(json.dumps(summarize(rows), sort_keys=True), file=sys.stderr)
    return 0


def cmd_synth(args) -> int:
    kwargs = {"depth_noise": args.noise, "seed": args.seed}
    if args.frames is not None:
        if args.scene == "two-frame":
            raise SystemExit("error: the two-frame scene has a fixed frame count")
        kwargs["n_frames"] = args.frames
    seq = synth.SCENES[args.scene](**kwargs)
    manifest = seq.write(args.output)
    log.info("wrote %d frames, manifest %s", len(seq), manifest)
    print(manifest)
    return 0


def cmd_convert(args) -> int:
    intr = io.CameraIntrinsics(*args.intrinsics[:4], int(args.intrinsics[4]), int(args.intrinsics[5]),
                               args.intrinsics[6])
    if args.format == "log":
        traj = _require(args.trajectory, "--trajectory")
        n = io.convert_log_dataset(args.root, traj, args.output, intr, args.depth_dir, args.color_dir)
    else:
        n = io.convert_tum_dataset(args.root, args.output, intr, args.max_dt)
    log.info("wrote %s with %d frames", args.output, n)
    return 0


# parser ----------------------------------------------------------------------

def _bool_flag(p, name, dest, help):
    p.add_argument(f"--{name}", dest=dest, action=argparse.BooleanOptionalAction, default=None, help=help)


def _common(p):
    p.add_argument("--config", help="JSON config file (see init-config)")
    p.add_argument("--threads", type=int, default=None, help="worker threads for likelihood evaluation")


def _mapping_flags(p):
    p.add_argument("--manifest", default=None)
    p.add_argument("--bandwidth", type=float, default=None, help="mode-seeking bandwidth sigma")
    p.add_argument("--alpha", type=float, default=None, help="hash cell size, meters")
    p.add_argument("--phi", type=float, default=None, help="fixed novelty threshold")
    p.add_argument("--phi-quantile", dest="phi_quantile", type=float, default=None)
    p.add_argument("--min-relevant", dest="min_relevant", type=int, default=None)
    p.add_argument("--decimation", type=int, default=None, help="pixel stride")
    _bool_flag(p, "submap", "submap", "restrict scoring to hash-retrieved components")
    _bool_flag(p, "marginal", "marginal", "score positions only (off: full 4D score)")


def _inference_flags(p):
    p.add_argument("--samples", type=int, default=None, help="total points to sample")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--batch", type=int, default=None, help="components per sampling batch")
    _bool_flag(p, "full-mixture", "full_mixture", "condition intensity on the whole mixture")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sogmap", description="Incremental 4D Gaussian mixture mapping")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-config", help="write the default config")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_init_config)

    p = sub.add_parser("map", help="incremental mapping over a manifest")
    _common(p)
    _mapping_flags(p)
    p.add_argument("--model", default=None, help="output model file")
    p.add_argument("--reports", default=None, help="frame report file (JSON lines, default stdout)")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("reconstruct", help="sample a dense point cloud from a model")
    _common(p)
    _inference_flags(p)
    p.add_argument("--model", default=None)
    p.add_argument("-o", "--output", default=None, help="output PLY file")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="compare a model or PLY against manifest ground truth")
    _common(p)
    _inference_flags(p)
    p.add_argument("--manifest", default=None)
    p.add_argument("--pred", required=True, help="model file or PLY")
    p.add_argument("--voxel", type=float, default=None)
    p.add_argument("--dist-thresh", dest="dist_thresh", type=float, default=None)
    p.add_argument("--gt-decimation", dest="gt_decimation", type=int, default=None)
    p.add_argument("--bandwidth", type=float, default=None, help="label only")
    p.add_argument("--method", default="Proposed")
    p.add_argument("--json", action="store_true", help="print a JSON record instead of a table")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time full-model vs submap relevance filtering")
    _common(p)
    _mapping_flags(p)
    p.add_argument("--alphas", type=float, nargs="+", default=None)
    p.add_argument("--repeats", type=int, default=None)
    p.add_argument("--reports", default=None, help="bench row file (JSON lines, default stdout)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="render a synthetic scene to PNGs and a manifest")
    p.add_argument("--scene", choices=sorted(synth.SCENES), default="room")
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--noise", type=float, default=0.005, help="depth noise std, meters")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("convert", help="write a manifest for an RGB-D dataset")
    p.add_argument("--format", choices=["log", "tum"], required=True)
    p.add_argument("--root", required=True)
    p.add_argument("--trajectory", default=None, help=".log trajectory (log format)")
    p.add_argument("--intrinsics", type=float, nargs=7, required=True,
                   metavar=("FX", "FY", "CX", "CY", "W", "H", "DEPTH_SCALE"))
    p.add_argument("--depth-dir", dest="depth_dir", default="depth")
    p.add_argument("--color-dir", dest="color_dir", default="image")
    p.add_argument("--max-dt", dest="max_dt", type=float, default=0.02)
    p.add_argument("-o", "--output", required=True, help="output manifest")
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except (io.ModelFormatError, io.ManifestError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    log.info("%s finished in %.2f s", args.command, time.perf_counter() - t0)
    return code
