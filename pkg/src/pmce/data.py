"""Synthetic motion clips and their on-disk format.

A clip is a seeded animation of the procedural body seen by a fixed pinhole
camera: GT joints and mesh in camera coordinates, noisy 2D keypoints in
pixels, and per-frame features that encode the body's shape.

Clip file layout (all little-endian):

    header     8s magic b"PMCECLIP", I version, 5I (T, J, V, V', D_f), q seed
    camera     3d focal/width/height, 9d rotation (row-major), 3d translation
    shape      2d scale, girth
    arrays     float64: joints (T,J,3), mesh (T,V,3), pose_2d (T,J,2), features (T,D_f)
    checksum   32 bytes sha256 over everything above
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .body import BodyConfig, BodyModel, build_body

MAGIC = b"PMCECLIP"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sI5Iq")
_CAMERA = struct.Struct("<3d9d3d")  # focal, width, height, rotation, translation
_SHAPE = struct.Struct("<2d")
_DIGEST = 32


class DatasetError(Exception):
    pass


class VersionMismatchError(DatasetError):
    pass


class TruncatedFileError(DatasetError):
    pass


class ChecksumError(DatasetError):
    pass


class GenerationError(DatasetError):
    """A joint fell behind the camera; pick another seed."""


@dataclass(frozen=True)
class Camera:
    focal: float
    width: float
    height: float
    rotation: np.ndarray = field(repr=False)
    translation: np.ndarray = field(repr=False)

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def project(self, points_cam: np.ndarray) -> np.ndarray:
        z = points_cam[..., 2:3]
        if (z <= 1e-6).any():
            raise GenerationError("point behind the camera")
        return self.focal * points_cam[..., :2] / z + np.array([self.width / 2, self.height / 2])


@dataclass(frozen=True)
class Motion:
    """World-space joint trajectories plus the global joint rotations that produced them."""

    joints: np.ndarray  # (T, J, 3)
    rotations: np.ndarray  # (T, J, 3, 3) global
    scale: float = 1.0
    girth: float = 1.0


@dataclass
class MotionClip:
    joints: np.ndarray  # (T, J, 3) camera frame
    mesh: np.ndarray  # (T, V, 3) camera frame
    pose_2d: np.ndarray  # (T, J, 2) pixels
    features: np.ndarray  # (T, D_f)
    camera: Camera
    seed: int
    scale: float
    girth: float

    @property
    def num_frames(self) -> int:
        return len(self.joints)

    def root_relative(self) -> tuple[np.ndarray, np.ndarray]:
        root = self.joints[:, :1]
        return self.joints - root, self.mesh - root


@dataclass(frozen=True)
class SynthConfig:
    body: BodyConfig = BodyConfig()
    clip_frames: int = 12
    feat_dim: int = 32
    motion_amplitude: float = 0.5
    noise_std: float = 2.0
    image_size: tuple[int, int] = (256, 256)
    focal: float = 300.0
    scale_range: tuple[float, float] = (0.85, 1.15)
    girth_range: tuple[float, float] = (0.6, 1.4)
    feature_seed: int = 1234

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        d["body"] = BodyConfig(**d["body"])
        d["image_size"] = tuple(d["image_size"])
        d["scale_range"] = tuple(d["scale_range"])
        d["girth_range"] = tuple(d["girth_range"])
        return cls(**d)


# ------------------------------------------------------------------ animation

def forward_kinematics(model: BodyModel, local_rot: np.ndarray, root_trans: np.ndarray,
                       scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """local_rot (T, J, 3, 3), root_trans (T, 3) -> joints (T, J, 3), global rotations."""
    parent, offsets = model.skeleton.parent, model.skeleton.rest_offsets * scale
    T, J = local_rot.shape[:2]
    glob = np.empty_like(local_rot)
    joints = np.empty((T, J, 3))
    glob[:, 0] = local_rot[:, 0]
    joints[:, 0] = root_trans
    for j in range(1, J):
        p = parent[j]
        glob[:, j] = glob[:, p] @ local_rot[:, j]
        joints[:, j] = joints[:, p] + glob[:, p] @ offsets[j]
    return joints, glob


def animate(model: BodyModel, seed: int, num_frames: int, motion_amplitude: float,
            scale: float = 1.0, girth: float = 1.0) -> Motion:
    """Seeded smooth sinusoidal joint rotations driven through the skeleton."""
    if num_frames < 1:
        raise ValueError("need at least one frame")
    rng = np.random.default_rng(seed)
    J = model.num_joints
    t = np.arange(num_frames, dtype=np.float64)[:, None, None]
    amp = rng.uniform(0.2, 1.0, size=(1, J, 3))
    freq = rng.uniform(0.02, 0.08, size=(1, J, 3))
    phase = rng.uniform(0.0, 2 * np.pi, size=(1, J, 3))
    rotvec = motion_amplitude * amp * np.sin(2 * np.pi * freq * t + phase)
    local = Rotation.from_rotvec(rotvec.reshape(-1, 3)).as_matrix().reshape(num_frames, J, 3, 3)

    drift = rng.uniform(-1, 1, size=(1, 3)) * np.array([0.1, 0.03, 0.1])
    root_trans = motion_amplitude * drift * np.sin(2 * np.pi * 0.03 * t[:, 0] + phase[0, 0, 0])
    joints, glob = forward_kinematics(model, local, root_trans, scale)
    return Motion(joints, glob, scale, girth)


def skin(model: BodyModel, motion: Motion) -> np.ndarray:
    """Carry every vertex rigidly with the bone its segment hangs from -> (T, V, 3)."""
    rest_joints = model.rest_joints(motion.scale)
    rest = model.shaped_template(motion.scale, motion.girth)
    seg = model.vertex_segment
    anchor = model.skeleton.parent[seg]
    anchor[seg == 0] = 0
    local = rest - rest_joints[anchor]  # (V, 3)
    rot = motion.rotations[:, anchor]  # (T, V, 3, 3)
    return motion.joints[:, anchor] + np.einsum("tvij,vj->tvi", rot, local)


def make_camera(rng: np.random.Generator, config: SynthConfig) -> Camera:
    w, h = config.image_size
    yaw = rng.uniform(-np.pi / 3, np.pi / 3)
    pitch = rng.uniform(-0.15, 0.15)
    # world is y-up with the body facing +z; camera looks down -z_world, y pointing down
    flip = np.diag([1.0, -1.0, -1.0])
    rot = flip @ Rotation.from_euler("xy", [pitch, yaw]).as_matrix()
    depth = rng.uniform(3.5, 5.0)
    trans = np.array([rng.uniform(-0.6, 0.6), rng.uniform(-0.3, 0.3), depth])
    return Camera(config.focal, float(w), float(h), rot, trans)


def project_2d(joints_cam: np.ndarray, camera: Camera, noise_std: float = 0.0,
               rng: np.random.Generator | None = None) -> np.ndarray:
    pix = camera.project(joints_cam)
    if noise_std > 0:
        rng = rng or np.random.default_rng(0)
        pix = pix + rng.normal(0.0, noise_std, size=pix.shape)
    return pix


def feature_projection(model: BodyModel, feat_dim: int, seed: int) -> np.ndarray:
    """Fixed random map from [coarse coords (3V'), scale, girth] to features."""
    rng = np.random.default_rng(seed)
    n_coords = 3 * model.num_coarse
    w = rng.normal(size=(feat_dim, n_coords + 2))
    w[:, :n_coords] /= np.sqrt(n_coords)
    return w


def synth_features(model: BodyModel, mesh_rel: np.ndarray, scale: float, girth: float,
                   projection: np.ndarray, config: SynthConfig) -> np.ndarray:
    """tanh of a fixed projection of root-relative coarse vertices and standardized shape."""
    coarse = mesh_rel[:, model.coarse.coarse_indices].reshape(len(mesh_rel), -1)
    shape = np.array([_standardize(scale, config.scale_range), _standardize(girth, config.girth_range)])
    inputs = np.concatenate([coarse, np.broadcast_to(shape, (len(coarse), 2))], axis=1)
    return np.tanh(inputs @ projection.T)


def _standardize(value: float, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    return 2.0 * (value - lo) / (hi - lo) - 1.0 if hi > lo else 0.0


def generate_clip(model: BodyModel, seed: int, config: SynthConfig) -> MotionClip:
    rng = np.random.default_rng([seed, 1])
    scale = rng.uniform(*config.scale_range)
    girth = rng.uniform(*config.girth_range)
    motion = animate(model, seed, config.clip_frames, config.motion_amplitude, scale, girth)
    mesh_world = skin(model, motion)
    camera = make_camera(rng, config)
    joints = camera.to_camera(motion.joints)
    mesh = camera.to_camera(mesh_world)
    pose_2d = project_2d(joints, camera, config.noise_std, rng)
    projection = feature_projection(model, config.feat_dim, config.feature_seed)
    features = synth_features(model, mesh - joints[:, :1], scale, girth, projection, config)
    return MotionClip(joints, mesh, pose_2d, features, camera, seed, scale, girth)


def generate_dataset(config: SynthConfig, seed: int, num_clips: int) -> list[MotionClip]:
    model = build_body(config.body)
    clips = []
    for i in range(num_clips):
        clip_seed = seed * 100_003 + i
        for attempt in range(16):
            try:
                clips.append(generate_clip(model, clip_seed + attempt * 7_919, config))
                break
            except GenerationError:
                continue
        else:
            raise GenerationError(f"could not place clip {i} in front of the camera")
    return clips


# ----------------------------------------------------------------- samples

@dataclass
class Batch:
    pose_2d: np.ndarray  # (B, T, J, 2) normalized
    features: np.ndarray  # (B, T, D_f)
    pose_gt: np.ndarray  # (B, J, 3) root-relative, mid-frame
    mesh_gt: np.ndarray  # (B, V, 3)

    def __len__(self) -> int:
        return len(self.pose_2d)

    def select(self, idx) -> "Batch":
        return Batch(self.pose_2d[idx], self.features[idx], self.pose_gt[idx], self.mesh_gt[idx])


def windows(clip: MotionClip, num_frames: int, zero_features: bool = False) -> Batch:
    """All length-T windows of a clip, supervised at frame ``start + T // 2``."""
    from .pose_stream import normalize_2d

    n = clip.num_frames - num_frames + 1
    if n < 1:
        return Batch(*(np.zeros((0,)) for _ in range(4)))
    joints_rel, mesh_rel = clip.root_relative()
    normed = normalize_2d(clip.pose_2d, clip.camera.width, clip.camera.height)
    starts = np.arange(n)
    frames = starts[:, None] + np.arange(num_frames)[None]
    mid = starts + num_frames // 2
    feats = clip.features[frames]
    if zero_features:
        feats = np.zeros_like(feats)
    return Batch(normed[frames], feats, joints_rel[mid], mesh_rel[mid])


def make_batch(clips: list[MotionClip], num_frames: int, zero_features: bool = False) -> Batch:
    parts = [windows(c, num_frames, zero_features) for c in clips if c.num_frames >= num_frames]
    return Batch(*(np.concatenate([getattr(p, k) for p in parts]) for k in
                   ("pose_2d", "features", "pose_gt", "mesh_gt")))


# ----------------------------------------------------------------- file format

def _clip_bytes(clip: MotionClip, num_coarse: int) -> bytes:
    T, J, _ = clip.joints.shape
    V = clip.mesh.shape[1]
    D = clip.features.shape[1]
    cam = clip.camera
    body = b"".join([
        _HEADER.pack(MAGIC, FORMAT_VERSION, T, J, V, num_coarse, D, clip.seed),
        _CAMERA.pack(cam.focal, cam.width, cam.height, *cam.rotation.ravel(), *cam.translation),
        _SHAPE.pack(clip.scale, clip.girth),
        *(np.ascontiguousarray(a, dtype="<f8").tobytes()
          for a in (clip.joints, clip.mesh, clip.pose_2d, clip.features)),
    ])
    return body + hashlib.sha256(body).digest()


def _parse_clip(raw: bytes, name: str) -> MotionClip:
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{name}: file shorter than header")
    magic, version, T, J, V, _, D, seed = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DatasetError(f"{name}: not a clip file")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{name}: format version {version}, expected {FORMAT_VERSION}")
    sizes = [T * J * 3, T * V * 3, T * J * 2, T * D]
    expected = _HEADER.size + _CAMERA.size + _SHAPE.size + 8 * sum(sizes) + _DIGEST
    if len(raw) < expected:
        raise TruncatedFileError(f"{name}: {len(raw)} bytes, expected {expected}")
    body, digest = raw[:expected - _DIGEST], raw[expected - _DIGEST:expected]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{name}: checksum mismatch")
    off = _HEADER.size
    cam = _CAMERA.unpack_from(raw, off)
    off += _CAMERA.size
    scale, girth = _SHAPE.unpack_from(raw, off)
    off += _SHAPE.size
    arrays = []
    for n, shape in zip(sizes, [(T, J, 3), (T, V, 3), (T, J, 2), (T, D)]):
        arrays.append(np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64))
        off += 8 * n
    camera = Camera(cam[0], cam[1], cam[2], np.array(cam[3:12]).reshape(3, 3), np.array(cam[12:15]))
    return MotionClip(*arrays, camera=camera, seed=seed, scale=scale, girth=girth)


def write_dataset(path, clips: list[MotionClip], config: SynthConfig, seed: int) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    num_coarse = build_body(config.body).num_coarse
    entries = []
    for i, clip in enumerate(clips):
        name = f"clip_{i:05d}.bin"
        raw = _clip_bytes(clip, num_coarse)
        (path / name).write_bytes(raw)
        entries.append({"file": name, "seed": clip.seed, "frames": clip.num_frames,
                        "sha256": hashlib.sha256(raw).hexdigest()})
    manifest = {
        "format_version": FORMAT_VERSION,
        "seed": seed,
        "num_clips": len(clips),
        "config": config.to_dict(),
        "clips": entries,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> dict:
    file = Path(path) / "manifest.json"
    if not file.exists():
        raise DatasetError(f"no manifest in {path}")
    manifest = json.loads(file.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise VersionMismatchError(
            f"manifest version {manifest.get('format_version')}, expected {FORMAT_VERSION}"
        )
    return manifest


def read_dataset(path) -> tuple[list[MotionClip], SynthConfig]:
    path = Path(path)
    manifest = read_manifest(path)
    clips = []
    for entry in manifest["clips"]:
        file = path / entry["file"]
        if not file.exists():
            raise DatasetError(f"missing clip file {entry['file']}")
        clips.append(_parse_clip(file.read_bytes(), entry["file"]))
    return clips, SynthConfig.from_dict(manifest["config"])
