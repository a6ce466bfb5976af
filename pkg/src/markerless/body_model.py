"""Articulated linear-blend-skinned body model.

Shape blending, forward kinematics, weighted farthest point sampling of
landmark vertices and local-frame surface markers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

FORMAT_VERSION = 1

DEFAULT_PART_WEIGHTS: dict[str, float] = {
    "left_hand": 4.0,
    "right_hand": 4.0,
    "left_foot": 2.0,
    "right_foot": 2.0,
    "head": 2.0,
}


class ModelError(ValueError):
    """Invalid body model data or mismatched parameter dimensions."""


@dataclass(frozen=True, eq=False)
class BodyModel:
    """Template mesh, kinematic tree, skinning weights, shape basis and joint regressor.

    Arrays are treated as immutable after construction.

    Attributes:
        name: Model identifier.
        parents: (K,) parent joint index, -1 for the root.
        template_vertices: (V, 3) rest-pose vertices in meters.
        faces: (F, 3) counter-clockwise vertex indices.
        joint_regressor: (K, V) rows sum to one.
        skinning_weights: (V, K) rows sum to one.
        shape_dirs: (B, V, 3) vertex offsets per unit shape coefficient.
        part_labels: optional (V,) part id indexing ``part_names``.
        part_names: names of the part ids.
    """

    name: str
    parents: np.ndarray
    template_vertices: np.ndarray
    faces: np.ndarray
    joint_regressor: np.ndarray
    skinning_weights: np.ndarray
    shape_dirs: np.ndarray
    part_labels: Optional[np.ndarray] = None
    part_names: tuple[str, ...] = ()
    joint_names: tuple[str, ...] = ()

    def __post_init__(self):
        conv = {
            "parents": np.int64,
            "template_vertices": np.float64,
            "faces": np.int64,
            "joint_regressor": np.float64,
            "skinning_weights": np.float64,
            "shape_dirs": np.float64,
        }
        for key, dtype in conv.items():
            arr = np.array(getattr(self, key), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, key, arr)
        if self.part_labels is not None:
            labels = np.array(self.part_labels, dtype=np.int64)
            labels.setflags(write=False)
            object.__setattr__(self, "part_labels", labels)
        object.__setattr__(self, "part_names", tuple(self.part_names))
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        self._validate()

    def _validate(self):
        K, V, B = self.num_joints, self.num_vertices, self.num_betas
        p = self.parents
        if p.ndim != 1 or K < 1 or p[0] != -1:
            raise ModelError("parents[0] must be -1")
        if np.any(p[1:] < 0) or np.any(p[1:] >= np.arange(1, K)):
            raise ModelError("parents must satisfy 0 <= parents[j] < j for j > 0")
        if self.template_vertices.shape != (V, 3):
            raise ModelError(f"template_vertices must be (V, 3), got {self.template_vertices.shape}")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ModelError("faces must be (F, 3)")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= V):
            raise ModelError("face index out of range")
        f = self.faces
        if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise ModelError("degenerate face with repeated vertex")
        for key, shape in (("joint_regressor", (K, V)), ("skinning_weights", (V, K))):
            m = getattr(self, key)
            if m.shape != shape:
                raise ModelError(f"{key} must be {shape}, got {m.shape}")
            if np.any(m < 0):
                raise ModelError(f"{key} has negative entries")
            if np.any(np.abs(m.sum(axis=1) - 1.0) > 1e-9):
                raise ModelError(f"{key} rows must sum to 1")
        if self.shape_dirs.shape != (B, V, 3):
            raise ModelError(f"shape_dirs must be (B, V, 3), got {self.shape_dirs.shape}")
        if self.part_labels is not None:
            if self.part_labels.shape != (V,):
                raise ModelError("part_labels must be (V,)")
            if self.part_labels.size and self.part_labels.max() >= max(len(self.part_names), 1):
                raise ModelError("part label without a name")

    @property
    def num_joints(self) -> int:
        return int(self.parents.shape[0])

    @property
    def num_vertices(self) -> int:
        return int(self.template_vertices.shape[0])

    @property
    def num_betas(self) -> int:
        return int(np.asarray(self.shape_dirs).shape[0])

    def part_mask(self, part: str) -> np.ndarray:
        """Boolean (V,) mask of vertices labelled ``part``."""
        if self.part_labels is None or part not in self.part_names:
            return np.zeros(self.num_vertices, dtype=bool)
        return self.part_labels == self.part_names.index(part)

    def joint_parts(self) -> np.ndarray:
        """Part id per joint: the most common label among vertices it dominates."""
        out = np.zeros(self.num_joints, dtype=np.int64)
        if self.part_labels is None:
            return out
        owner = np.argmax(self.skinning_weights, axis=1)
        for j in range(self.num_joints):
            labels = self.part_labels[owner == j]
            if labels.size:
                out[j] = np.bincount(labels).argmax()
        return out


@dataclass
class BodyParams:
    """Per-frame shape coefficients, per-joint axis-angle pose and root translation."""

    betas: np.ndarray
    pose: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64).reshape(-1)
        self.pose = np.asarray(self.pose, dtype=np.float64).reshape(-1, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        for key in ("betas", "pose", "translation"):
            if not np.all(np.isfinite(getattr(self, key))):
                raise ModelError(f"non-finite {key}")

    @classmethod
    def zeros(cls, model: BodyModel) -> "BodyParams":
        return cls(np.zeros(model.num_betas), np.zeros((model.num_joints, 3)), np.zeros(3))

    def copy(self) -> "BodyParams":
        return BodyParams(self.betas.copy(), self.pose.copy(), self.translation.copy())

    def pack(self) -> np.ndarray:
        """Flatten as ``[t, root pose, remaining pose, betas]``."""
        return np.concatenate([self.translation, self.pose.reshape(-1), self.betas])

    @classmethod
    def unpack(cls, x: np.ndarray, num_joints: int, num_betas: int) -> "BodyParams":
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (3 + 3 * num_joints + num_betas,):
            raise ModelError(f"packed vector has wrong length {x.shape}")
        return cls(x[3 + 3 * num_joints:], x[3:3 + 3 * num_joints].reshape(num_joints, 3), x[:3])


@dataclass(frozen=True, eq=False)
class PosedBody:
    vertices: np.ndarray
    joints: np.ndarray


@dataclass(frozen=True, eq=False)
class LandmarkSet:
    """Selected landmark vertex indices and the weights used to pick them."""

    indices: np.ndarray
    sampling_weights: Optional[np.ndarray] = None

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if np.unique(idx).size != idx.size:
            raise ModelError("landmark indices must be distinct")
        object.__setattr__(self, "indices", idx)
        if self.sampling_weights is not None:
            object.__setattr__(
                self, "sampling_weights", np.asarray(self.sampling_weights, dtype=np.float64)
            )

    def __len__(self) -> int:
        return int(self.indices.size)


@dataclass(frozen=True)
class MarkerSpec:
    """Surface marker: a vertex plus an offset in that vertex's local triangle frame."""

    vertex: int
    displacement: tuple[float, float, float] = (0.0, 0.0, 0.0)


# --------------------------------------------------------------------------
# Rotations
# --------------------------------------------------------------------------


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


_SKEW_BASIS = np.stack([skew(e) for e in np.eye(3)])


def _rodrigues_coeffs(theta: float):
    """sin(t)/t, (1-cos t)/t^2 and their t-derivatives divided by t."""
    if theta < 1e-2:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0 - t2 ** 3 / 5040.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0 - t2 ** 3 / 40320.0
        da = -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0 + t2 ** 3 / 45360.0
        db = -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0 + t2 ** 3 / 453600.0
        return a, b, da, db
    s, c = math.sin(theta), math.cos(theta)
    a = s / theta
    b = (1.0 - c) / theta ** 2
    da = (theta * c - s) / theta ** 3
    db = (theta * s - 2.0 * (1.0 - c)) / theta ** 4
    return a, b, da, db


def rodrigues(axis_angle) -> np.ndarray:
    """Rotation matrix of an axis-angle vector (identity at zero)."""
    v = np.asarray(axis_angle, dtype=np.float64).reshape(3)
    a, b, _, _ = _rodrigues_coeffs(float(np.linalg.norm(v)))
    k = skew(v)
    return np.eye(3) + a * k + b * (k @ k)


def rodrigues_jacobian(axis_angle) -> tuple[np.ndarray, np.ndarray]:
    """Rotation matrix and its derivatives ``dR[i] = dR/dv_i``, shape (3, 3, 3)."""
    v = np.asarray(axis_angle, dtype=np.float64).reshape(3)
    a, b, da, db = _rodrigues_coeffs(float(np.linalg.norm(v)))
    k = skew(v)
    k2 = k @ k
    R = np.eye(3) + a * k + b * k2
    dR = np.empty((3, 3, 3))
    for i in range(3):
        e = _SKEW_BASIS[i]
        dR[i] = a * e + b * (e @ k + k @ e) + v[i] * (da * k + db * k2)
    return R, dR


def rotation_log(R: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix (angle in [0, pi])."""
    y = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = 0.5 * np.linalg.norm(y)
    c = 0.5 * (np.trace(R) - 1.0)
    angle = math.atan2(s, c)
    if angle < 1e-8:
        return 0.5 * y
    if math.pi - angle > 1e-6:
        return angle / (2.0 * math.sin(angle)) * y
    # near pi: axis from the symmetric part
    B = 0.5 * (R + np.eye(3))
    axis = np.sqrt(np.clip(np.diag(B), 0.0, None))
    i = int(np.argmax(axis))
    axis = B[i] / axis[i]
    axis /= np.linalg.norm(axis)
    if np.dot(axis, y) < 0:
        axis = -axis
    return angle * axis


# --------------------------------------------------------------------------
# Shape and skinning
# --------------------------------------------------------------------------


def _check_betas(model: BodyModel, betas) -> np.ndarray:
    betas = np.asarray(betas, dtype=np.float64).reshape(-1)
    if betas.shape[0] != model.num_betas:
        raise ModelError(f"expected {model.num_betas} shape coefficients, got {betas.shape[0]}")
    return betas


def shape_blend(model: BodyModel, betas) -> tuple[np.ndarray, np.ndarray]:
    """Shaped template vertices (V, 3) and the rest joints regressed from them (K, 3)."""
    betas = _check_betas(model, betas)
    verts = model.template_vertices + np.tensordot(betas, model.shape_dirs, axes=1)
    return verts, model.joint_regressor @ verts


def global_transforms(parents, rest_joints, rotations):
    """Chain local rotations about the rest joints.

    Returns world rotations (K, 3, 3) and world joint positions (K, 3).
    """
    K = len(parents)
    Rg = np.empty((K, 3, 3))
    tg = np.empty((K, 3))
    Rg[0] = rotations[0]
    tg[0] = rest_joints[0]
    for j in range(1, K):
        p = parents[j]
        Rg[j] = Rg[p] @ rotations[j]
        tg[j] = Rg[p] @ (rest_joints[j] - rest_joints[p]) + tg[p]
    return Rg, tg


def lbs_forward(model: BodyModel, params: BodyParams) -> PosedBody:
    """Pose the shaped template by linear blend skinning and add the translation."""
    pose = np.asarray(params.pose, dtype=np.float64)
    if pose.shape != (model.num_joints, 3):
        raise ModelError(f"pose must be ({model.num_joints}, 3), got {pose.shape}")
    shaped, rest = shape_blend(model, params.betas)
    rots = np.stack([rodrigues(p) for p in pose])
    Rg, tg = global_transforms(model.parents, rest, rots)
    # per joint candidate positions, then blend
    cand = np.einsum("kab,vkb->vka", Rg, shaped[:, None, :] - rest[None, :, :]) + tg[None]
    verts = np.einsum("vk,vka->va", model.skinning_weights, cand) + params.translation
    return PosedBody(verts, tg + params.translation)


# --------------------------------------------------------------------------
# Landmark sampling
# --------------------------------------------------------------------------


def fps_sample(points, weights, n: int, seed_index: int = 0) -> LandmarkSet:
    """Weighted greedy farthest point sampling.

    Each step picks the unselected point maximizing
    ``weight * min distance to the selected set``; ties go to the lowest index.
    """
    pts = np.asarray(points, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (pts.shape[0],):
        raise ValueError("weights must have one entry per point")
    if n > pts.shape[0]:
        raise ValueError(f"cannot sample {n} of {pts.shape[0]} points")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if not np.any(w > 0):
        raise ValueError("all sampling weights are zero")
    if not 0 <= seed_index < pts.shape[0]:
        raise ValueError("seed_index out of range")
    chosen = [int(seed_index)]
    taken = np.zeros(pts.shape[0], dtype=bool)
    taken[seed_index] = True
    mind = np.sqrt(((pts - pts[seed_index]) ** 2).sum(axis=1))
    for _ in range(1, n):
        score = np.where(taken, -np.inf, w * mind)
        i = int(np.argmax(score))
        chosen.append(i)
        taken[i] = True
        mind = np.minimum(mind, np.sqrt(((pts - pts[i]) ** 2).sum(axis=1)))
    return LandmarkSet(np.array(chosen, dtype=np.int64), w)


def sampling_weights(model: BodyModel, table: Optional[Mapping[str, float]] = None) -> np.ndarray:
    """Per-vertex FPS weights from part labels (1.0 for unlisted parts)."""
    table = DEFAULT_PART_WEIGHTS if table is None else table
    default = float(table.get("default", 1.0))
    w = np.full(model.num_vertices, default)
    if model.part_labels is not None:
        for pid, name in enumerate(model.part_names):
            if name in table:
                w[model.part_labels == pid] = float(table[name])
    return w


def sample_landmarks(model: BodyModel, n: int, seed_index: int = 0, table=None) -> LandmarkSet:
    """FPS on the rest-pose template with part-based weights."""
    return fps_sample(model.template_vertices, sampling_weights(model, table), n, seed_index)


# --------------------------------------------------------------------------
# Surface markers
# --------------------------------------------------------------------------


def incident_frame(vertices, faces, vertex: int) -> tuple[np.ndarray, np.ndarray]:
    """Local frame of ``vertex`` from its lowest-index incident triangle.

    Returns the origin (the vertex) and a 3x3 matrix whose columns are the
    right-handed orthonormal axes.
    """
    verts = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces)
    hits = np.nonzero((faces == vertex).any(axis=1))[0]
    if hits.size == 0:
        raise ModelError(f"vertex {vertex} has no incident face")
    tri = [int(i) for i in faces[hits[0]]]
    k = tri.index(vertex)
    a, b = tri[(k + 1) % 3], tri[(k + 2) % 3]
    origin = verts[vertex]
    e1 = verts[a] - origin
    e2 = verts[b] - origin
    n1 = np.linalg.norm(e1)
    normal = np.cross(e1, e2)
    nn = np.linalg.norm(normal)
    if n1 == 0.0 or nn <= 1e-15 * max(n1 * np.linalg.norm(e2), 1e-300):
        raise ModelError(f"degenerate triangle at vertex {vertex}")
    a1 = e1 / n1
    a3 = np.cross(a1, e2)
    a3 /= np.linalg.norm(a3)
    a2 = np.cross(a3, a1)
    return origin.copy(), np.stack([a1, a2, a3], axis=1)


def regress_marker(vertices, faces, spec: MarkerSpec) -> np.ndarray:
    origin, axes = incident_frame(vertices, faces, spec.vertex)
    return origin + axes @ np.asarray(spec.displacement, dtype=np.float64)


def marker_from_point(vertices, faces, vertex: int, point) -> MarkerSpec:
    """Express a world point as a displacement in ``vertex``'s local frame."""
    origin, axes = incident_frame(vertices, faces, vertex)
    d = axes.T @ (np.asarray(point, dtype=np.float64) - origin)
    return MarkerSpec(int(vertex), tuple(float(x) for x in d))


# --------------------------------------------------------------------------
# File I/O
# --------------------------------------------------------------------------


def model_to_dict(model: BodyModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "name": model.name,
        "num_joints": model.num_joints,
        "num_vertices": model.num_vertices,
        "num_betas": model.num_betas,
        "parents": model.parents.tolist(),
        "joint_names": list(model.joint_names),
        "template_vertices": model.template_vertices.reshape(-1).tolist(),
        "faces": model.faces.reshape(-1).tolist(),
        "joint_regressor": model.joint_regressor.reshape(-1).tolist(),
        "skinning_weights": model.skinning_weights.reshape(-1).tolist(),
        "shape_dirs": model.shape_dirs.reshape(-1).tolist(),
        "part_labels": None if model.part_labels is None else model.part_labels.tolist(),
        "part_names": list(model.part_names),
    }


def model_from_dict(d: dict) -> BodyModel:
    if d.get("format_version") != FORMAT_VERSION:
        raise ModelError(f"unsupported body model format_version {d.get('format_version')!r}")
    try:
        K, V, B = int(d["num_joints"]), int(d["num_vertices"]), int(d["num_betas"])
        return BodyModel(
            name=d["name"],
            parents=d["parents"],
            template_vertices=np.reshape(d["template_vertices"], (V, 3)),
            faces=np.reshape(d["faces"], (-1, 3)),
            joint_regressor=np.reshape(d["joint_regressor"], (K, V)),
            skinning_weights=np.reshape(d["skinning_weights"], (V, K)),
            shape_dirs=np.reshape(d["shape_dirs"], (B, V, 3)),
            part_labels=d.get("part_labels"),
            part_names=d.get("part_names", ()),
            joint_names=d.get("joint_names", ()),
        )
    except KeyError as exc:
        raise ModelError(f"body model missing field {exc.args[0]!r}") from None
    except ValueError as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(f"malformed body model: {exc}") from None


def save_model(model: BodyModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)) + "\n")


def load_model(path) -> BodyModel:
    """Load a model from JSON, or the procedural toy body for ``builtin:toy``."""
    if str(path) == "builtin:toy":
        from .toy import stick_body

        return stick_body()
    return model_from_dict(json.loads(Path(path).read_text()))


def landmarks_to_dict(landmarks: LandmarkSet, model_hash: Optional[str] = None) -> dict:
    d = {"format_version": FORMAT_VERSION, "indices": landmarks.indices.tolist()}
    if landmarks.sampling_weights is not None:
        d["weights_used"] = landmarks.sampling_weights.tolist()
    if model_hash is not None:
        d["topology_hash"] = model_hash
    return d


def landmarks_from_dict(d: dict) -> LandmarkSet:
    if d.get("format_version") != FORMAT_VERSION:
        raise ModelError(f"unsupported landmark format_version {d.get('format_version')!r}")
    return LandmarkSet(d["indices"], d.get("weights_used"))


def validate_landmarks(model: BodyModel, landmarks: LandmarkSet) -> None:
    idx = landmarks.indices
    if idx.size > model.num_vertices or (idx.size and (idx.min() < 0 or idx.max() >= model.num_vertices)):
        raise ModelError("landmark index out of range for model")


def part_counts(model: BodyModel, indices: Sequence[int]) -> dict[str, int]:
    if model.part_labels is None:
        return {"all": len(indices)}
    labels = model.part_labels[np.asarray(indices, dtype=np.int64)]
    return {name: int((labels == i).sum()) for i, name in enumerate(model.part_names)}
