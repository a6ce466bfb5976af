"""Evaluation metrics between reference and fitted body sequences.

Distances are computed and stored in meters; ``MetricsReport.to_dict``
converts to millimeters for serialization. No alignment is applied: global
translation is part of what is being evaluated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .body_model import BodyModel, BodyParams, MarkerSpec, lbs_forward, regress_marker
from .camera import Rig
from .render import rasterize, silhouette_iou

MM = 1000.0


def _paired(gt, pred) -> tuple[np.ndarray, np.ndarray]:
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if gt.shape != pred.shape:
        raise ValueError(f"shape mismatch: {gt.shape} vs {pred.shape}")
    if gt.ndim < 2 or gt.shape[-1] != 3:
        raise ValueError("expected arrays of 3-vectors")
    return gt, pred


def mean_distance(gt, pred, mask=None) -> float:
    """Mean Euclidean distance over every leading index, optionally restricted along axis -2."""
    gt, pred = _paired(gt, pred)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        gt, pred = gt[..., mask, :], pred[..., mask, :]
    if gt.size == 0:
        raise ValueError("no points to compare")
    return float(np.linalg.norm(gt - pred, axis=-1).mean())


def mpjpe(gt_joints, pred_joints) -> float:
    """Mean per-joint position error in meters; arrays (..., K, 3)."""
    return mean_distance(gt_joints, pred_joints)


def pve(gt_vertices, pred_vertices, mask=None) -> float:
    """Mean per-vertex error in meters; arrays (..., V, 3), ``mask`` selects vertices."""
    return mean_distance(gt_vertices, pred_vertices, mask)


def heldout_marker_error(gt_meshes, pred_meshes, faces, specs: Sequence[MarkerSpec]) -> float:
    """Mean distance between markers regressed on both mesh sequences (T, V, 3)."""
    gt, pred = _paired(gt_meshes, pred_meshes)
    if not specs:
        raise ValueError("no markers")
    gt = gt.reshape(-1, *gt.shape[-2:])
    pred = pred.reshape(-1, *pred.shape[-2:])
    total = 0.0
    for a, b in zip(gt, pred):
        for s in specs:
            total += float(np.linalg.norm(regress_marker(a, faces, s) - regress_marker(b, faces, s)))
    return total / (len(gt) * len(specs))


def _scene_mesh(meshes, faces):
    """Stack several persons' (P, V, 3) meshes into one vertex/face list."""
    meshes = np.asarray(meshes, dtype=np.float64)
    if meshes.ndim == 2:
        return meshes, faces
    V = meshes.shape[1]
    allf = np.concatenate([faces + k * V for k in range(meshes.shape[0])])
    return meshes.reshape(-1, 3), allf


def frame_iou(meshes_a, meshes_b, faces, rig: Rig, resolution) -> np.ndarray:
    """Silhouette IoU per camera for one frame."""
    va, fa = _scene_mesh(meshes_a, faces)
    vb, fb = _scene_mesh(meshes_b, faces)
    out = np.empty(len(rig))
    for c, cam in enumerate(rig.cameras):
        _, ma = rasterize(va, fa, cam, resolution)
        _, mb = rasterize(vb, fb, cam, resolution)
        out[c] = silhouette_iou(ma, mb)
    return out


def sequence_miou(meshes_a, meshes_b, faces, rig: Rig, resolution=None) -> tuple[float, np.ndarray]:
    """Mean silhouette IoU over frames and cameras, plus the per-frame means.

    ``meshes_*`` are (T, V, 3) or (T, P, V, 3); all persons of a frame are
    rendered into one silhouette.
    """
    if resolution is not None and (int(resolution[0]) <= 0 or int(resolution[1]) <= 0):
        raise ValueError("resolution must be positive")
    a = np.asarray(meshes_a, dtype=np.float64)
    b = np.asarray(meshes_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    per_frame = np.array([frame_iou(x, y, faces, rig, resolution).mean() for x, y in zip(a, b)])
    return float(per_frame.mean()), per_frame


@dataclass
class MetricsReport:
    """Sequence metrics in meters; ``to_dict`` serializes millimeters."""

    mpjpe: float
    pve: float
    per_part: dict[str, dict[str, float]] = field(default_factory=dict)
    heldout_marker: Optional[float] = None
    miou: Optional[float] = None
    per_frame: dict[str, list[float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "mpjpe_mm": self.mpjpe * MM,
            "pve_mm": self.pve * MM,
            "per_part": {
                part: {k.replace("_m", "_mm"): v * MM for k, v in vals.items()}
                for part, vals in self.per_part.items()
            },
            "heldout_marker_mm": None if self.heldout_marker is None else self.heldout_marker * MM,
            "miou": self.miou,
        }
        return d

    def frame_records(self) -> list[dict]:
        T = len(self.per_frame.get("mpjpe", []))
        out = []
        for f in range(T):
            rec = {"frame": f}
            for key, series in self.per_frame.items():
                rec[key if key == "miou" else f"{key}_mm"] = series[f] if key == "miou" else series[f] * MM
            out.append(rec)
        return out


def posed_arrays(model: BodyModel, sequences: Sequence[Sequence[BodyParams]]) -> tuple[np.ndarray, np.ndarray]:
    """Vertices (T, P, V, 3) and joints (T, P, K, 3) for per-person parameter sequences."""
    T = len(sequences[0])
    verts = np.empty((T, len(sequences), model.num_vertices, 3))
    joints = np.empty((T, len(sequences), model.num_joints, 3))
    for k, seq in enumerate(sequences):
        if len(seq) != T:
            raise ValueError("all persons need the same number of frames")
        for f, params in enumerate(seq):
            body = lbs_forward(model, params)
            verts[f, k] = body.vertices
            joints[f, k] = body.joints
    return verts, joints


def evaluate(model: BodyModel, gt: Sequence[Sequence[BodyParams]], pred: Sequence[Sequence[BodyParams]], *,
             markers: Optional[Sequence[MarkerSpec]] = None, rig: Optional[Rig] = None,
             resolution=None) -> MetricsReport:
    """Full report for matching per-person sequences; averages run uniformly over (person, frame, item)."""
    if len(gt) != len(pred):
        raise ValueError("person counts differ")
    gv, gj = posed_arrays(model, gt)
    pv, pj = posed_arrays(model, pred)
    if gv.shape != pv.shape:
        raise ValueError("frame counts differ")
    T = gv.shape[0]
    report = MetricsReport(mpjpe(gj, pj), pve(gv, pv))
    report.per_frame["mpjpe"] = [mpjpe(gj[f], pj[f]) for f in range(T)]
    report.per_frame["pve"] = [pve(gv[f], pv[f]) for f in range(T)]
    if model.part_labels is not None:
        jparts = model.joint_parts()
        for i, name in enumerate(model.part_names):
            vm = model.part_labels == i
            if not vm.any():
                continue
            vals = {"pve_m": pve(gv, pv, vm)}
            jm = jparts == i
            if jm.any():
                vals["mpjpe_m"] = mean_distance(gj, pj, jm)
            report.per_part[name] = vals
    if markers:
        flat_g = gv.reshape(-1, *gv.shape[-2:])
        flat_p = pv.reshape(-1, *pv.shape[-2:])
        report.heldout_marker = heldout_marker_error(flat_g, flat_p, model.faces, markers)
        report.per_frame["heldout_marker"] = [
            heldout_marker_error(gv[f], pv[f], model.faces, markers) for f in range(T)
        ]
    if rig is not None:
        report.miou, frames = sequence_miou(gv, pv, model.faces, rig, resolution)
        report.per_frame["miou"] = frames.tolist()
    return report
