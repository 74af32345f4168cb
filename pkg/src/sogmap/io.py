"""Frame ingestion, manifests, model files and PLY export.

Point clouds are plain ``(N, 4)`` float arrays of ``(x, y, z, intensity)``.

Model file layout (little-endian)::

    magic  b"SGMM" | version u32 | n_components u32 | support_count u32
    per component: weight f32, mean 4 x f32, covariance upper triangle 10 x f32

Manifest grammar (one record per line, ``#`` starts a comment, paths are
relative to the manifest's directory)::

    intrinsics <fx> <fy> <cx> <cy> <width> <height> <depth_scale>
    frame <depth_path> <intensity_path> <16 numbers: 4x4 pose, row-major>
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.spatial.transform import Rotation

from .core import Gmm

MAGIC = b"SGMM"
FORMAT_VERSION = 1
HEADER_SIZE = 16
COMPONENT_BYTES = 15 * 4
_HEADER = struct.Struct("<4sIII")
_TRIU = np.triu_indices(4)

# Rec.601 luma
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class ModelFormatError(ValueError):
    """Base class for malformed model files."""


class BadMagicError(ModelFormatError):
    pass


class UnsupportedVersionError(ModelFormatError):
    pass


class TruncatedModelError(ModelFormatError):
    pass


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_scale: float = 1000.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        if self.depth_scale <= 0:
            raise ValueError("depth_scale must be positive")


@dataclass(frozen=True)
class Pose:
    """Rigid sensor-to-world transform ``x_world = R x_sensor + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6) or abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ValueError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: apply ``other`` first, then ``self``."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)


@dataclass
class FrameRecord:
    depth_path: Path
    intensity_path: Path
    pose: Pose


@dataclass
class Manifest:
    intrinsics: CameraIntrinsics
    frames: list

    def __len__(self):
        return len(self.frames)


def make_cloud(xyz, intensity) -> np.ndarray:
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    i = np.asarray(intensity, dtype=np.float64).reshape(-1, 1)
    return np.hstack([xyz, i])


def check_cloud(cloud) -> np.ndarray:
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.ndim != 2 or cloud.shape[1] != 4:
        raise ValueError(f"expected an (N, 4) cloud, got shape {cloud.shape}")
    if not np.all(np.isfinite(cloud)):
        raise ValueError("cloud contains non-finite values")
    if cloud.size and (cloud[:, 3].min() < 0 or cloud[:, 3].max() > 1):
        raise ValueError("intensity must lie in [0, 1]")
    return cloud


def to_gray(image) -> np.ndarray:
    """Normalize an 8/16-bit gray or RGB(A) image to float intensity in [0, 1]."""
    img = np.asarray(image)
    if img.ndim == 3:
        img = img[..., :3].astype(np.float64) @ LUMA_WEIGHTS
        scale = 255.0 if np.asarray(image).dtype == np.uint8 else _dtype_max(image)
        return np.clip(img / scale, 0.0, 1.0)
    if np.issubdtype(img.dtype, np.floating):
        return np.clip(img.astype(np.float64), 0.0, 1.0)
    return img.astype(np.float64) / _dtype_max(img)


def _dtype_max(img) -> float:
    dt = np.asarray(img).dtype
    return float(np.iinfo(dt).max) if np.issubdtype(dt, np.integer) else 1.0


def load_frame(depth_image, intensity_image, intrinsics: CameraIntrinsics, decimation: int = 1):
    """Back-project every ``decimation``-th pixel with positive depth.

    Returns ``(cloud, depth)``: the sensor-frame ``(N, 4)`` cloud and the
    per-point depth in meters.
    """
    if decimation < 1:
        raise ValueError("decimation must be >= 1")
    depth_raw = np.asarray(depth_image)
    gray = to_gray(intensity_image)
    if depth_raw.shape[:2] != gray.shape[:2]:
        raise ValueError(f"depth {depth_raw.shape[:2]} and intensity {gray.shape[:2]} differ in size")
    d = depth_raw[::decimation, ::decimation].astype(np.float64) / intrinsics.depth_scale
    g = gray[::decimation, ::decimation]
    v, u = np.mgrid[0 : depth_raw.shape[0] : decimation, 0 : depth_raw.shape[1] : decimation]
    valid = (d > 0) & np.isfinite(d)
    z = d[valid]
    x = (u[valid] - intrinsics.cx) * z / intrinsics.fx
    y = (v[valid] - intrinsics.cy) * z / intrinsics.fy
    return make_cloud(np.column_stack([x, y, z]), g[valid]), z


def transform_cloud(cloud, pose: Pose) -> np.ndarray:
    cloud = np.asarray(cloud, dtype=np.float64)
    out = cloud.copy()
    out[:, :3] = cloud[:, :3] @ pose.rotation.T + pose.translation
    return out


# model files ---------------------------------------------------------------

def model_to_bytes(model: Gmm) -> bytes:
    if model.dim != 4:
        raise ValueError("only 4D models are serialized")
    k = model.n_components
    rec = np.empty((k, 15), dtype="<f4")
    rec[:, 0] = model.weights
    rec[:, 1:5] = model.means
    rec[:, 5:] = model.covariances[:, _TRIU[0], _TRIU[1]]
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, k, int(model.support_count))
    return header + rec.tobytes()


def model_from_bytes(buf: bytes) -> Gmm:
    if len(buf) < HEADER_SIZE:
        raise TruncatedModelError(f"file has {len(buf)} bytes, header needs {HEADER_SIZE}")
    magic, version, k, support = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported format version {version}")
    expected = HEADER_SIZE + k * COMPONENT_BYTES
    if len(buf) != expected:
        raise TruncatedModelError(f"expected {expected} bytes for {k} components, got {len(buf)}")
    rec = np.frombuffer(buf, dtype="<f4", offset=HEADER_SIZE).reshape(k, 15).astype(np.float64)
    cov = np.zeros((k, 4, 4))
    cov[:, _TRIU[0], _TRIU[1]] = rec[:, 5:]
    cov[:, _TRIU[1], _TRIU[0]] = rec[:, 5:]
    # f32 rounding can push the weight sum off by ~1e-7; these models are
    # reloaded as-is so the file round-trips bit-exactly
    return Gmm(rec[:, 0], rec[:, 1:5], cov, support, _check=False)


def quantize_model(model: Gmm) -> Gmm:
    """The model as it will read back from disk (parameters rounded to f32)."""
    return model_from_bytes(model_to_bytes(model))


def save_model(model: Gmm, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> Gmm:
    return model_from_bytes(Path(path).read_bytes())


def model_file_size(n_components: int) -> int:
    return HEADER_SIZE + COMPONENT_BYTES * n_components


# PLY -----------------------------------------------------------------------

_PLY_VERTEX = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("intensity", "u1")])


def export_ply(cloud, path) -> None:
    """Binary little-endian PLY with float32 xyz and a uchar ``intensity``."""
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 4)
    vert = np.empty(cloud.shape[0], dtype=_PLY_VERTEX)
    vert["x"], vert["y"], vert["z"] = cloud[:, 0], cloud[:, 1], cloud[:, 2]
    vert["intensity"] = np.clip(np.round(cloud[:, 3] * 255.0), 0, 255).astype(np.uint8)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {cloud.shape[0]}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar intensity\nend_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(vert.tobytes())


def read_ply(path) -> np.ndarray:
    """Read back a PLY written by :func:`export_ply`."""
    data = Path(path).read_bytes()
    end = data.index(b"end_header\n") + len(b"end_header\n")
    header = data[:end].decode("ascii").splitlines()
    if header[0] != "ply" or "binary_little_endian" not in header[1]:
        raise ValueError("only binary little-endian PLY files are supported")
    n = next(int(line.split()[2]) for line in header if line.startswith("element vertex"))
    vert = np.frombuffer(data, dtype=_PLY_VERTEX, count=n, offset=end)
    out = np.empty((n, 4))
    out[:, 0], out[:, 1], out[:, 2] = vert["x"], vert["y"], vert["z"]
    out[:, 3] = vert["intensity"] / 255.0
    return out


# images and manifests ------------------------------------------------------

def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im)


def write_depth_png(depth_m, path, depth_scale: float = 1000.0) -> None:
    """Store depth in meters as a 16-bit PNG (0 marks invalid pixels)."""
    d = np.nan_to_num(np.asarray(depth_m, dtype=np.float64), nan=0.0, posinf=0.0)
    raw = np.clip(np.round(d * depth_scale), 0, 65535).astype(np.uint16)
    Image.fromarray(raw).save(path)


def write_gray_png(intensity, path) -> None:
    g = np.clip(np.round(np.asarray(intensity, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(g).save(path)


def read_manifest(path) -> Manifest:
    path = Path(path)
    base = path.parent
    intr = None
    frames = []
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] == "intrinsics" and len(tok) == 8:
                fx, fy, cx, cy = map(float, tok[1:5])
                intr = CameraIntrinsics(fx, fy, cx, cy, int(tok[5]), int(tok[6]), float(tok[7]))
            elif tok[0] == "frame" and len(tok) == 19:
                pose = Pose.from_matrix([float(v) for v in tok[3:]])
                frames.append(FrameRecord(base / tok[1], base / tok[2], pose))
            else:
                raise ManifestError(f"unrecognized record {tok[0]!r}")
        except (ValueError, IndexError) as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from exc
    if intr is None:
        raise ManifestError(f"{path}: missing intrinsics record")
    return Manifest(intr, frames)


def write_manifest(path, intrinsics: CameraIntrinsics, frames) -> None:
    """``frames`` holds ``(depth_path, intensity_path, Pose)`` triples."""
    path = Path(path)
    base = path.parent
    i = intrinsics
    lines = [
        "# sogmap manifest",
        f"intrinsics {i.fx!r} {i.fy!r} {i.cx!r} {i.cy!r} {i.width} {i.height} {i.depth_scale!r}",
    ]
    for depth_path, int_path, pose in frames:
        m = " ".join(repr(float(v)) for v in pose.matrix().reshape(-1))
        dp = os.path.relpath(depth_path, base)
        ip = os.path.relpath(int_path, base)
        lines.append(f"frame {dp} {ip} {m}")
    path.write_text("\n".join(lines) + "\n")


def iter_manifest_frames(manifest: Manifest, decimation: int = 1):
    """Yield ``(world_cloud, depth, pose)`` for every manifest frame in order."""
    for rec in manifest.frames:
        depth = read_image(rec.depth_path)
        gray = read_image(rec.intensity_path)
        cloud, z = load_frame(depth, gray, manifest.intrinsics, decimation)
        yield transform_cloud(cloud, rec.pose), z, rec.pose


# dataset converters --------------------------------------------------------

def read_log_trajectory(path) -> list:
    """Poses from a ``.log`` trajectory (a ``<id> <id> <n>`` line then a 4x4 matrix per frame)."""
    rows = [line.split() for line in Path(path).read_text().splitlines() if line.strip()]
    poses = []
    for s in range(0, len(rows) - 4, 5):
        m = np.array([[float(v) for v in r] for r in rows[s + 1 : s + 5]])
        poses.append(Pose.from_matrix(m))
    return poses


def read_tum_trajectory(path) -> dict:
    """``timestamp -> Pose`` from a TUM ``tx ty tz qx qy qz qw`` file."""
    out = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        t, tx, ty, tz, qx, qy, qz, qw = map(float, line.split()[:8])
        r = Rotation.from_quat([qx, qy, qz, qw]).as_matrix()
        out[t] = Pose(r, [tx, ty, tz])
    return out


def _sorted_images(folder) -> list:
    exts = {".png", ".jpg", ".jpeg"}
    return sorted(p for p in Path(folder).iterdir() if p.suffix.lower() in exts)


def convert_log_dataset(root, trajectory, out_manifest, intrinsics: CameraIntrinsics,
                        depth_dir="depth", color_dir="image") -> int:
    """Manifest for a ``depth/`` + ``image/`` folder pair with a ``.log`` trajectory
    (the layout used by the Redwood and ICL-NUIM releases).  Returns the frame count."""
    root = Path(root)
    depths = _sorted_images(root / depth_dir)
    colors = _sorted_images(root / color_dir)
    poses = read_log_trajectory(trajectory)
    n = min(len(depths), len(colors), len(poses))
    if n == 0:
        raise ManifestError("no frames found")
    write_manifest(out_manifest, intrinsics, list(zip(depths[:n], colors[:n], poses[:n])))
    return n


def convert_tum_dataset(root, out_manifest, intrinsics: CameraIntrinsics, max_dt: float = 0.02) -> int:
    """Manifest for a TUM RGB-D sequence (``rgb.txt``, ``depth.txt``, ``groundtruth.txt``),
    associating each depth image with the nearest color image and pose in time."""
    root = Path(root)

    def listing(name):
        out = []
        for line in (root / name).read_text().splitlines():
            if line.strip() and not line.startswith("#"):
                t, rel = line.split()[:2]
                out.append((float(t), root / rel))
        return out

    rgb = listing("rgb.txt")
    traj = read_tum_trajectory(root / "groundtruth.txt")
    rgb_t = np.array([t for t, _ in rgb])
    pose_t = np.array(sorted(traj))
    frames = []
    for t, dpath in listing("depth.txt"):
        i = int(np.argmin(np.abs(rgb_t - t)))
        j = int(np.argmin(np.abs(pose_t - t)))
        if abs(rgb_t[i] - t) <= max_dt and abs(pose_t[j] - t) <= max_dt:
            frames.append((dpath, rgb[i][1], traj[pose_t[j]]))
    if not frames:
        raise ManifestError("no associated frames found")
    write_manifest(out_manifest, intrinsics, frames)
    return len(frames)
