"""Procedural stick body built from capsule-like tubes.

Ten joints (root, spine, neck, head and two arms of shoulder, elbow,
wrist), about 600 vertices and four shape directions. Needs no external
assets, so tests and synthetic scenes can run anywhere.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .body_model import BodyModel

JOINT_NAMES = (
    "root", "spine", "neck", "head",
    "left_shoulder", "left_elbow", "left_wrist",
    "right_shoulder", "right_elbow", "right_wrist",
)
PARENTS = (-1, 0, 1, 2, 1, 4, 5, 1, 7, 8)
PART_NAMES = ("body", "left_hand", "right_hand", "head")

_SHOULDER_X = 0.16
_ARM_Y = 0.45

# (owner joint, start, end, radius, part, defines joint); hands and head
# get a flattened cross-section (see _ASPECT) so twist about the bone is
# visible in the silhouette and landmarks

_SEGMENTS = (
    (0, (0.0, 0.0, 0.0), (0.0, -0.16, 0.0), 0.13, "body", False),
    (0, (0.0, 0.0, 0.0), (0.0, 0.25, 0.0), 0.12, "body", True),
    (1, (0.0, 0.25, 0.0), (0.0, 0.50, 0.0), 0.14, "body", True),
    (2, (0.0, 0.50, 0.0), (0.0, 0.60, 0.0), 0.05, "body", True),
    (3, (0.0, 0.60, 0.0), (0.0, 0.84, 0.02), 0.10, "head", True),
    (4, (_SHOULDER_X, _ARM_Y, 0.0), (0.44, _ARM_Y, 0.0), 0.05, "body", True),
    (5, (0.44, _ARM_Y, 0.0), (0.70, _ARM_Y, 0.0), 0.04, "body", True),
    (6, (0.70, _ARM_Y, 0.0), (0.86, _ARM_Y, 0.01), 0.035, "left_hand", True),
    (7, (-_SHOULDER_X, _ARM_Y, 0.0), (-0.44, _ARM_Y, 0.0), 0.05, "body", True),
    (8, (-0.44, _ARM_Y, 0.0), (-0.70, _ARM_Y, 0.0), 0.04, "body", True),
    (9, (-0.70, _ARM_Y, 0.0), (-0.86, _ARM_Y, 0.01), 0.035, "right_hand", True),
)

_ARM_JOINTS = {4, 5, 6, 7, 8, 9}

# cross-section scale along the two ring axes, per owner joint
_ASPECT = {3: (0.85, 1.15), 6: (0.5, 1.4), 9: (0.5, 1.4)}


def _ring_frame(axis):
    ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(ref, axis)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return e1, e2


def _tube(start, end, radius, n_rings, n_around, aspect=(1.0, 1.0)):
    """Closed tube: rings along the axis plus two cap poles. Outward CCW faces."""
    start, end = np.asarray(start, float), np.asarray(end, float)
    axis = end - start
    length = np.linalg.norm(axis)
    axis = axis / length
    e1, e2 = _ring_frame(axis)
    s = np.linspace(0.0, 1.0, n_rings)
    phi = 2.0 * np.pi * np.arange(n_around) / n_around
    radial = aspect[0] * np.cos(phi)[:, None] * e1 + aspect[1] * np.sin(phi)[:, None] * e2
    centers = start + s[:, None] * (end - start)
    ring = centers[:, None, :] + radius * radial[None]
    verts = ring.reshape(-1, 3)
    cap = 0.5 * radius
    poles = np.stack([start - cap * axis, end + cap * axis])
    verts = np.concatenate([verts, poles])
    # along-axis parameter and axis foot point of every vertex
    s_all = np.concatenate([np.repeat(s, n_around), [0.0, 1.0]])
    foot = np.concatenate([np.repeat(centers, n_around, axis=0), poles])

    def vid(i, k):
        return i * n_around + (k % n_around)

    faces = []
    for i in range(n_rings - 1):
        for k in range(n_around):
            faces.append((vid(i, k), vid(i, k + 1), vid(i + 1, k + 1)))
            faces.append((vid(i, k), vid(i + 1, k + 1), vid(i + 1, k)))
    p0, p1 = n_rings * n_around, n_rings * n_around + 1
    for k in range(n_around):
        faces.append((p0, vid(0, k + 1), vid(0, k)))
        faces.append((p1, vid(n_rings - 1, k), vid(n_rings - 1, k + 1)))
    return verts, np.array(faces), s_all, foot


@lru_cache(maxsize=4)
def stick_body(n_rings: int = 6, n_around: int = 9, blend: float = 0.35) -> BodyModel:
    """Build the toy body (616 vertices with the default resolution)."""
    K = len(PARENTS)
    verts, faces, weights, labels = [], [], [], []
    regressor_rings = {}
    radial_dirs = []
    offset = 0
    for owner, start, end, radius, part, defines in _SEGMENTS:
        v, f, s, foot = _tube(start, end, radius, n_rings, n_around, _ASPECT.get(owner, (1.0, 1.0)))
        n = v.shape[0]
        w = np.zeros((n, K))
        parent = PARENTS[owner]
        if parent >= 0:
            wp = 0.5 * np.clip(1.0 - s / blend, 0.0, 1.0)
            w[:, parent] = wp
            w[:, owner] = 1.0 - wp
        else:
            w[:, owner] = 1.0
        if defines:
            regressor_rings[owner] = offset + np.arange(n_around)
        verts.append(v)
        faces.append(f + offset)
        weights.append(w)
        labels.append(np.full(n, PART_NAMES.index(part)))
        radial_dirs.append(v - foot)
        offset += n
    verts = np.concatenate(verts)
    faces = np.concatenate(faces)
    weights = np.concatenate(weights)
    labels = np.concatenate(labels)
    radial = np.concatenate(radial_dirs)
    V = verts.shape[0]

    regressor = np.zeros((K, V))
    for j, ring in regressor_rings.items():
        regressor[j, ring] = 1.0 / ring.size

    owner = np.concatenate([np.full(n_rings * n_around + 2, seg[0]) for seg in _SEGMENTS])
    on_arm = np.isin(owner, list(_ARM_JOINTS))
    sign = np.sign(verts[:, 0])
    dirs = np.zeros((4, V, 3))
    # arm length, measured from the shoulder
    dirs[0, on_arm, 0] = 0.15 * (verts[on_arm, 0] - sign[on_arm] * _SHOULDER_X)
    # torso height above the root
    above = verts[:, 1] > 0.0
    dirs[1, above, 1] = 0.12 * verts[above, 1]
    # girth, radial about each tube axis
    dirs[2] = 0.15 * radial
    # shoulder width
    dirs[3, on_arm, 0] = 0.04 * sign[on_arm]

    return BodyModel(
        name="toy_stick_body",
        parents=np.array(PARENTS),
        template_vertices=verts,
        faces=faces,
        joint_regressor=regressor,
        skinning_weights=weights,
        shape_dirs=dirs,
        part_labels=labels,
        part_names=PART_NAMES,
        joint_names=JOINT_NAMES,
    )
