"""Synthetic RGB-D scenes: ray-cast axis-aligned boxes with a smooth solid texture.

Everything here exists so the mapping pipeline can be exercised without
downloading a dataset.  Cameras follow the usual optical convention
(x right, y down, z forward); poses map camera to world.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .io import CameraIntrinsics, Pose


def default_intrinsics() -> CameraIntrinsics:
    """640x480 Kinect-style camera (about 62 x 49 degrees field of view)."""
    return CameraIntrinsics(525.0, 525.0, 319.5, 239.5, 640, 480, 1000.0)


@dataclass
class Box:
    lo: np.ndarray
    hi: np.ndarray
    # True for a room seen from inside, False for a solid obstacle
    inside: bool = False

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)

    def intersect(self, origin, dirs):
        """Ray parameter of the first hit along ``origin + t * dirs`` (inf on miss)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (self.lo - origin) / dirs
            t2 = (self.hi - origin) / dirs
        tmin = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
        tmax = np.where(np.isnan(t1), np.inf, np.maximum(t1, t2))
        near = tmin.max(axis=1)
        far = tmax.min(axis=1)
        if self.inside:
            return np.where(far > 0, far, np.inf)
        hit = (near <= far) & (near > 0)
        return np.where(hit, near, np.inf)


def wavy_texture(p, seed: int = 0):
    """Smooth intensity field over world space with values in [0.1, 0.9]."""
    rng = np.random.default_rng(seed)
    ph = rng.uniform(0, 2 * math.pi, size=4)
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    v = (
        0.5
        + 0.2 * np.sin(2 * math.pi * (x + 0.4 * y) / 1.6 + ph[0])
        + 0.15 * np.sin(2 * math.pi * (y - 0.3 * z) / 1.1 + ph[1]) * np.cos(2 * math.pi * z / 1.9 + ph[2])
        + 0.05 * np.sin(2 * math.pi * (x - z) / 0.7 + ph[3])
    )
    return np.clip(v, 0.1, 0.9)


@dataclass
class Scene:
    boxes: list
    texture_seed: int = 0

    def texture(self, points):
        return wavy_texture(points, self.texture_seed)

    def raycast(self, origin, dirs):
        t = np.full(dirs.shape[0], np.inf)
        for b in self.boxes:
            t = np.minimum(t, b.intersect(origin, dirs))
        return t

    def render(self, intr: CameraIntrinsics, pose: Pose, depth_noise: float = 0.0, rng=None):
        """Depth (meters, 0 on miss) and noise-free intensity images for one view.

        Noise is added to the depth along each pixel ray; intensity is sampled
        at the true surface point.
        """
        v, u = np.mgrid[0 : intr.height, 0 : intr.width]
        cam = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones(u.shape)], axis=-1)
        cam = cam.reshape(-1, 3)
        dirs = cam @ pose.rotation.T  # camera z component is 1, so t is depth
        t = self.raycast(pose.translation, dirs)
        hit = np.isfinite(t)
        pts = pose.translation + t[hit, None] * dirs[hit]
        intensity = np.zeros(t.shape)
        intensity[hit] = self.texture(pts)
        depth = np.where(hit, t, 0.0)
        if depth_noise > 0:
            rng = rng if rng is not None else np.random.default_rng(0)
            depth[hit] += rng.normal(0.0, depth_noise, size=int(hit.sum()))
            depth[depth < 0] = 0.0
        return depth.reshape(intr.height, intr.width), intensity.reshape(intr.height, intr.width)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    eye = np.asarray(eye, dtype=np.float64)
    f = np.asarray(target, dtype=np.float64) - eye
    f /= np.linalg.norm(f)
    r = np.cross(f, up)
    r /= np.linalg.norm(r)
    d = np.cross(f, r)
    return Pose(np.column_stack([r, d, f]), eye)


def yaw_pitch_pose(eye, yaw: float, pitch: float = 0.0) -> Pose:
    """Camera at ``eye`` looking along heading ``yaw`` (radians from +x), tilted up by ``pitch``."""
    fwd = np.array([math.cos(yaw) * math.cos(pitch), math.sin(yaw) * math.cos(pitch), math.sin(pitch)])
    return look_at(eye, np.asarray(eye) + fwd)


# scenes --------------------------------------------------------------------

def textured_room(size=(4.0, 3.5, 2.6), with_furniture: bool = True, texture_seed: int = 0) -> Scene:
    sx, sy, sz = size
    boxes = [Box([-sx / 2, -sy / 2, 0.0], [sx / 2, sy / 2, sz], inside=True)]
    if with_furniture:
        boxes.append(Box([0.9, 0.6, 0.0], [1.6, 1.5, 0.75]))
        boxes.append(Box([-1.8, -1.5, 0.0], [-1.2, -0.6, 1.1]))
    return Scene(boxes, texture_seed)


def room_trajectory(n_frames: int = 20, height: float = 1.3, radius: float = 0.25, pitch: float = 0.2):
    """Camera circling the room center, panning through a full turn with alternating tilt."""
    poses = []
    for k in range(n_frames):
        a = 2 * math.pi * k / n_frames
        eye = [radius * math.cos(a), radius * math.sin(a), height]
        tilt = -pitch if k % 2 == 0 else 0.5 * pitch
        poses.append(yaw_pitch_pose(eye, a, tilt))
    return poses


def corridor(length: float = 34.0, width: float = 2.2, height: float = 2.5, texture_seed: int = 1) -> Scene:
    return Scene(
        [Box([-length / 2, -width / 2, 0.0], [length / 2, width / 2, height], inside=True)],
        texture_seed,
    )


def corridor_trajectory(n_frames: int = 50, step: float = 0.6, standoff: float = 0.9,
                        width: float = 2.2, height: float = 1.2):
    """Camera sliding along the corridor, facing the +y wall at ``standoff`` meters."""
    x0 = -0.5 * step * (n_frames - 1)
    y = width / 2 - standoff
    return [yaw_pitch_pose([x0 + k * step, y, height], math.pi / 2, -0.25) for k in range(n_frames)]


def two_frame_poses(turn: float = 0.6):
    """Two views from the room center whose fields of view partly overlap."""
    eye = [0.0, 0.0, 1.3]
    return [yaw_pitch_pose(eye, 0.0, -0.15), yaw_pitch_pose(eye, turn, -0.15)]


# frames --------------------------------------------------------------------

@dataclass
class SyntheticSequence:
    scene: Scene
    intrinsics: CameraIntrinsics
    poses: list
    depth_noise: float = 0.005
    seed: int = 0
    # per-frame multiplicative intensity gain (camera exposure); None = 1 everywhere
    exposure: list | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.poses)

    def images(self, k: int, noisy: bool = True):
        key = (k, noisy)
        if key not in self._cache:
            rng = np.random.default_rng([self.seed, k])
            noise = self.depth_noise if noisy else 0.0
            depth, gray = self.scene.render(self.intrinsics, self.poses[k], noise, rng)
            if self.exposure is not None:
                gray = np.clip(gray * self.exposure[k], 0.0, 1.0)
            # the sensor quantizes depth to 1/depth_scale and intensity to 8 bits
            scale = self.intrinsics.depth_scale
            depth = np.round(depth * scale) / scale
            gray = np.round(gray * 255.0) / 255.0
            self._cache[key] = (depth, gray)
        return self._cache[key]

    def frame(self, k: int, decimation: int = 5, noisy: bool = True):
        """World-frame cloud and per-point depth for frame ``k``."""
        depth, gray = self.images(k, noisy)
        intr = self.intrinsics
        raw = np.round(depth * intr.depth_scale).astype(np.uint16)
        cloud, z = io.load_frame(raw, gray, intr, decimation)
        return io.transform_cloud(cloud, self.poses[k]), z

    def frames(self, decimation: int = 5, noisy: bool = True):
        for k in range(len(self)):
            yield self.frame(k, decimation, noisy)

    def write(self, out_dir, manifest_name: str = "manifest.txt") -> Path:
        """Write 16-bit depth / 8-bit gray PNGs and a manifest; returns the manifest path."""
        out = Path(out_dir)
        (out / "depth").mkdir(parents=True, exist_ok=True)
        (out / "gray").mkdir(parents=True, exist_ok=True)
        records = []
        for k in range(len(self)):
            depth, gray = self.images(k)
            dp = out / "depth" / f"{k:05d}.png"
            gp = out / "gray" / f"{k:05d}.png"
            io.write_depth_png(depth, dp, self.intrinsics.depth_scale)
            io.write_gray_png(gray, gp)
            records.append((dp, gp, self.poses[k]))
        manifest = out / manifest_name
        io.write_manifest(manifest, self.intrinsics, records)
        return manifest


def room_sequence(n_frames: int = 20, depth_noise: float = 0.005, seed: int = 0) -> SyntheticSequence:
    return SyntheticSequence(textured_room(), default_intrinsics(), room_trajectory(n_frames), depth_noise, seed)


def corridor_sequence(n_frames: int = 50, depth_noise: float = 0.005, seed: int = 0) -> SyntheticSequence:
    return SyntheticSequence(corridor(), default_intrinsics(), corridor_trajectory(n_frames), depth_noise, seed)


def two_frame_sequence(depth_noise: float = 0.005, seed: int = 0, turn: float = 0.6,
                       exposure=(1.0, 1.1)) -> SyntheticSequence:
    """Two overlapping room views; the second is exposed ``exposure[1]`` times brighter."""
    exposure = None if exposure is None else list(exposure)
    return SyntheticSequence(textured_room(), default_intrinsics(), two_frame_poses(turn), depth_noise, seed,
                             exposure)


SCENES = {
    "room": room_sequence,
    "corridor": corridor_sequence,
    "two-frame": two_frame_sequence,
}
