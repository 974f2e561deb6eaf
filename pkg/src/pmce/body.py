"""Procedural tube-body: skeleton, template mesh, joint regressor, coarse mapping.

Each joint owns a segment running from its parent (or, for the root, from a
short stub below it) to the joint itself. The segment is wrapped by
``rings_per_bone`` rings of ``verts_per_ring`` vertices, the last ring
centered exactly on the joint. Consecutive rings are stitched into triangle
strips, and each segment's first ring is stitched to the parent's joint ring.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

# name, parent, rest offset from parent, tube radius
_JOINTS = [
    ("pelvis", 0, (0.0, 0.0, 0.0), 0.12),
    ("spine", 0, (0.0, 0.25, 0.0), 0.13),
    ("neck", 1, (0.0, 0.25, 0.0), 0.06),
    ("head", 2, (0.0, 0.15, 0.0), 0.09),
    ("l_hip", 0, (0.10, -0.05, 0.0), 0.08),
    ("l_knee", 4, (0.0, -0.42, 0.0), 0.06),
    ("r_hip", 0, (-0.10, -0.05, 0.0), 0.08),
    ("r_knee", 6, (0.0, -0.42, 0.0), 0.06),
    ("l_shoulder", 2, (0.18, -0.02, 0.0), 0.06),
    ("l_elbow", 8, (0.28, 0.0, 0.0), 0.045),
    ("r_shoulder", 2, (-0.18, -0.02, 0.0), 0.06),
    ("r_elbow", 10, (-0.28, 0.0, 0.0), 0.045),
    ("l_ankle", 5, (0.0, -0.42, 0.0), 0.045),
    ("r_ankle", 7, (0.0, -0.42, 0.0), 0.045),
    ("l_wrist", 9, (0.25, 0.0, 0.0), 0.035),
    ("r_wrist", 11, (-0.25, 0.0, 0.0), 0.035),
    ("l_foot", 12, (0.0, -0.05, 0.12), 0.035),
    ("r_foot", 13, (0.0, -0.05, 0.12), 0.035),
    ("l_hand", 14, (0.08, 0.0, 0.0), 0.03),
    ("r_hand", 15, (-0.08, 0.0, 0.0), 0.03),
    ("head_top", 3, (0.0, 0.12, 0.0), 0.07),
    ("l_thumb", 14, (0.03, 0.0, 0.04), 0.015),
    ("r_thumb", 15, (-0.03, 0.0, 0.04), 0.015),
    ("nose", 3, (0.0, 0.02, 0.10), 0.02),
]
_ROOT_STUB = np.array([0.0, -0.08, 0.0])
MIN_JOINTS, MAX_JOINTS = 12, len(_JOINTS)


@dataclass(frozen=True)
class BodyConfig:
    num_joints: int = 12
    rings_per_bone: int = 2
    verts_per_ring: int = 6
    coarse_stride: int = 3

    @classmethod
    def full(cls) -> "BodyConfig":
        # 24 * 12 * 24 = 6912 vertices, 432 coarse: the nearest grid to 6890 / 431
        return cls(num_joints=24, rings_per_bone=12, verts_per_ring=24, coarse_stride=16)


@dataclass(frozen=True)
class SkeletonTopology:
    names: tuple[str, ...]
    parent: np.ndarray
    rest_offsets: np.ndarray

    @property
    def num_joints(self) -> int:
        return len(self.parent)

    def rest_joints(self, scale: float = 1.0) -> np.ndarray:
        joints = np.zeros((self.num_joints, 3))
        for j in range(1, self.num_joints):
            joints[j] = joints[self.parent[j]] + scale * self.rest_offsets[j]
        return joints


@dataclass(frozen=True)
class MeshTopology:
    num_vertices: int
    faces: np.ndarray
    edges: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class CoarseMapping:
    coarse_indices: np.ndarray
    upsample_init: np.ndarray  # (V, V') row-stochastic

    @property
    def num_coarse(self) -> int:
        return len(self.coarse_indices)


@dataclass(frozen=True)
class BodyModel:
    config: BodyConfig
    skeleton: SkeletonTopology
    template_vertices: np.ndarray
    topology: MeshTopology
    coarse: CoarseMapping
    regressor: np.ndarray  # (J, V)
    nearest_joint: np.ndarray  # (V',)
    # per-vertex construction data, used to reshape the template
    vertex_segment: np.ndarray = field(repr=False)
    vertex_fraction: np.ndarray = field(repr=False)
    vertex_radial: np.ndarray = field(repr=False)
    joint_radius: np.ndarray = field(repr=False)

    @property
    def num_joints(self) -> int:
        return self.skeleton.num_joints

    @property
    def num_vertices(self) -> int:
        return self.topology.num_vertices

    @property
    def num_coarse(self) -> int:
        return self.coarse.num_coarse

    @property
    def faces(self) -> np.ndarray:
        return self.topology.faces

    def rest_joints(self, scale: float = 1.0) -> np.ndarray:
        return self.skeleton.rest_joints(scale)

    def coarse_template(self) -> np.ndarray:
        return self.template_vertices[self.coarse.coarse_indices]

    def shaped_template(self, scale: float = 1.0, girth: float = 1.0) -> np.ndarray:
        """Rest mesh with bone lengths times ``scale`` and tube radii times ``scale * girth``."""
        joints = self.rest_joints(scale)
        seg = self.vertex_segment
        starts = _segment_starts(self.skeleton, joints, scale)[seg]
        centers = starts + self.vertex_fraction[:, None] * (joints[seg] - starts)
        radius = scale * girth * self.joint_radius[seg]
        return centers + radius[:, None] * self.vertex_radial

    def height(self, scale: float = 1.0) -> float:
        verts = self.shaped_template(scale)
        return float(verts[:, 1].max() - verts[:, 1].min())


def _segment_starts(skeleton: SkeletonTopology, joints: np.ndarray, scale: float) -> np.ndarray:
    starts = joints[skeleton.parent].copy()
    starts[0] = joints[0] + scale * _ROOT_STUB
    return starts


def _ring_basis(direction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = direction / np.linalg.norm(direction)
    ref = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = ref - (ref @ d) * d
    u /= np.linalg.norm(u)
    return u, np.cross(d, u)


def _strip(ring_a: np.ndarray, ring_b: np.ndarray) -> list[tuple[int, int, int]]:
    n = len(ring_a)
    faces = []
    for i in range(n):
        a, b = ring_a[i], ring_a[(i + 1) % n]
        c, d = ring_b[i], ring_b[(i + 1) % n]
        faces.append((a, b, d))
        faces.append((a, d, c))
    return faces


def edges_from_faces(faces: np.ndarray) -> np.ndarray:
    pairs = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    pairs = np.sort(pairs, axis=1)
    return np.unique(pairs, axis=0)


def build_body(config: BodyConfig | None = None) -> BodyModel:
    config = config or BodyConfig()
    J, R, n = config.num_joints, config.rings_per_bone, config.verts_per_ring
    if not MIN_JOINTS <= J <= MAX_JOINTS:
        raise ValueError(f"num_joints must be in [{MIN_JOINTS}, {MAX_JOINTS}], got {J}")
    if R < 1 or n < 3 or config.coarse_stride < 1:
        raise ValueError(f"degenerate body config {config}")

    spec = _JOINTS[:J]
    skeleton = SkeletonTopology(
        names=tuple(s[0] for s in spec),
        parent=np.array([s[1] for s in spec]),
        rest_offsets=np.array([s[2] for s in spec], dtype=np.float64),
    )
    radius = np.array([s[3] for s in spec])
    joints = skeleton.rest_joints()
    starts = _segment_starts(skeleton, joints, 1.0)

    angles = 2.0 * np.pi * np.arange(n) / n
    segment, fraction, radial = [], [], []
    rings = np.arange(J * R * n).reshape(J, R, n)
    for j in range(J):
        u, w = _ring_basis(joints[j] - starts[j])
        dirs = np.cos(angles)[:, None] * u + np.sin(angles)[:, None] * w
        for k in range(R):
            segment.extend([j] * n)
            fraction.extend([(k + 1) / R] * n)
            radial.append(dirs)
    segment = np.array(segment)
    fraction = np.array(fraction, dtype=np.float64)
    radial = np.concatenate(radial)

    faces = []
    for j in range(J):
        for k in range(R - 1):
            faces += _strip(rings[j, k], rings[j, k + 1])
        if j > 0:
            faces += _strip(rings[skeleton.parent[j], R - 1], rings[j, 0])
    faces = np.array(faces, dtype=np.int64)
    num_vertices = J * R * n
    topology = MeshTopology(num_vertices, faces, edges_from_faces(faces))

    centers = starts[segment] + fraction[:, None] * (joints[segment] - starts[segment])
    template = centers + radius[segment][:, None] * radial

    regressor = np.zeros((J, num_vertices))
    for j in range(J):
        regressor[j, rings[j, R - 1]] = 1.0 / n

    coarse_idx = np.arange(0, num_vertices, config.coarse_stride)
    if len(coarse_idx) < J:
        raise ValueError(f"coarse mesh has {len(coarse_idx)} vertices, fewer than {J} joints")
    coarse = CoarseMapping(coarse_idx, _inverse_distance_weights(template, coarse_idx))

    dists = np.linalg.norm(template[coarse_idx][:, None, :] - joints[None], axis=-1)
    nearest = np.argmin(dists, axis=1)  # first minimum = lowest joint index on ties

    return BodyModel(
        config=config,
        skeleton=skeleton,
        template_vertices=template,
        topology=topology,
        coarse=coarse,
        regressor=regressor,
        nearest_joint=nearest,
        vertex_segment=segment,
        vertex_fraction=fraction,
        vertex_radial=radial,
        joint_radius=radius,
    )


def _inverse_distance_weights(vertices: np.ndarray, coarse_idx: np.ndarray, k: int = 3) -> np.ndarray:
    coarse = vertices[coarse_idx]
    k = min(k, len(coarse_idx))
    weights = np.zeros((len(vertices), len(coarse_idx)))
    dists = np.linalg.norm(vertices[:, None, :] - coarse[None], axis=-1)
    order = np.argsort(dists, axis=1, kind="stable")[:, :k]
    for v in range(len(vertices)):
        nearest = order[v]
        d = dists[v, nearest]
        if d[0] < 1e-12:
            weights[v, nearest[0]] = 1.0
        else:
            inv = 1.0 / d
            weights[v, nearest] = inv / inv.sum()
    return weights


# ------------------------------------------------------------------ operations

def nearest_joint_init(model: BodyModel, pose):
    """Place each coarse vertex on its precomputed nearest joint of ``pose``.

    Works on numpy arrays or tensors with leading batch axes.
    """
    if isinstance(pose, Tensor):
        return ad.take(pose, model.nearest_joint, axis=-2)
    return np.take(np.asarray(pose), model.nearest_joint, axis=-2)


def regress_joints(mesh, regressor: np.ndarray):
    if mesh.shape[-2] != regressor.shape[1]:
        raise ValueError(f"regressor expects {regressor.shape[1]} vertices, got {mesh.shape}")
    if isinstance(mesh, Tensor):
        return ad.matmul(ad.tensor(regressor), mesh)
    return regressor @ np.asarray(mesh)


def face_normals(vertices: np.ndarray, faces: np.ndarray, eps: float = 1e-12):
    """Unit normals per face and a mask flagging degenerate (zero-area) faces."""
    v = np.asarray(vertices)
    a, b, c = v[..., faces[:, 0], :], v[..., faces[:, 1], :], v[..., faces[:, 2], :]
    cross = np.cross(b - a, c - a)
    norm = np.linalg.norm(cross, axis=-1, keepdims=True)
    degenerate = norm[..., 0] <= eps
    normals = np.divide(cross, norm, out=np.zeros_like(cross), where=norm > eps)
    return normals, degenerate


def face_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    v = np.asarray(vertices)
    a, b, c = v[..., faces[:, 0], :], v[..., faces[:, 1], :], v[..., faces[:, 2], :]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=-1)


def mean_edge_length(vertices: np.ndarray, edges: np.ndarray) -> float:
    return float(np.linalg.norm(vertices[edges[:, 0]] - vertices[edges[:, 1]], axis=-1).mean())


def write_obj(path, vertices: np.ndarray, faces: np.ndarray) -> None:
    """ASCII OBJ with 1-based face indices; 17 significant digits round-trip float64."""
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in np.asarray(vertices)]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(faces)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(x.split("/")[0]) - 1 for x in parts[1:4]])
    return np.array(verts), np.array(faces, dtype=np.int64)
