"""Run configuration: every module's settings in one JSON document.

``RunConfig.to_json`` writes every field including defaults, so the file
produced by ``init-config`` documents the full parameter set and parses
back to an equal object.
"""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .infer import InferenceConfig
from .mapper import MapperConfig


@dataclass
class EvalConfig:
    # ground truth voxel filter and match radius, meters
    gt_voxel: float = 0.01
    dist_thresh: float = 0.01
    # pixel stride when building ground truth (1 = full resolution)
    gt_decimation: int = 1

    def __post_init__(self):
        if self.gt_voxel <= 0 or self.dist_thresh <= 0:
            raise ValueError("gt_voxel and dist_thresh must be positive")
        if self.gt_decimation < 1:
            raise ValueError("gt_decimation must be >= 1")


@dataclass
class BenchConfig:
    alphas: list = field(default_factory=lambda: [0.1, 0.2, 0.4, 0.8])
    # workspace half-width covered by the grid for every alpha, meters
    half_width: float = 25.6
    repeats: int = 3

    def __post_init__(self):
        if not self.alphas or min(self.alphas) <= 0:
            raise ValueError("alphas must be a nonempty list of positive values")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")


@dataclass
class RunConfig:
    mapper: MapperConfig = field(default_factory=MapperConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    # pixel stride applied to every frame before mapping
    decimation: int = 5
    threads: int = 1
    manifest: str | None = None
    model: str | None = None
    output: str | None = None

    def __post_init__(self):
        if self.decimation < 1:
            raise ValueError("decimation must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _build(cls, data)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


def _build(cls, data):
    if not isinstance(data, dict):
        raise ValueError(f"{cls.__name__}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init and not f.name.startswith("_")}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"{cls.__name__}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        tp = hints.get(name)
        if dataclasses.is_dataclass(tp) and isinstance(tp, type):
            value = _build(tp, value)
        kwargs[name] = value
    return cls(**kwargs)


def with_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Copy of ``cfg`` with dotted-path overrides (``{"mapper.sogmm.bandwidth": 0.05}``)."""
    data = cfg.to_dict()
    for path, value in overrides.items():
        if value is None:
            continue
        node = data
        *head, leaf = path.split(".")
        for key in head:
            node = node[key]
        if leaf not in node:
            raise KeyError(path)
        node[leaf] = value
    return RunConfig.from_dict(data)
