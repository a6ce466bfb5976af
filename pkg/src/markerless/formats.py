"""On-disk formats shared by the command-line tools.

Motion and observation files are JSON lines: a header object followed by
one record per line. Floats are written with Python's shortest round-trip
repr, so write -> read -> write reproduces the same bytes. Headers carry
64-bit FNV-1a hashes of the model topology and landmark set so mismatched
assets are caught before any fitting happens.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .body_model import BodyModel, BodyParams, LandmarkSet, MarkerSpec
from .observe import FrameObservations, LandmarkObservations

FORMAT_VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK = (1 << 64) - 1


class FormatError(ValueError):
    """Malformed or unsupported file; the message names the file and line."""


class ConsistencyError(ValueError):
    """Inputs that are individually valid but do not belong together."""


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK
    return h


def _hash_ints(values: Iterable[int]) -> str:
    data = np.asarray(list(values), dtype="<i8").tobytes()
    return f"{fnv1a64(data):016x}"


def topology_hash(model: BodyModel) -> str:
    """Hash of vertex/joint/shape counts, kinematic tree and faces."""
    head = [model.num_vertices, model.num_joints, model.num_betas, len(model.faces)]
    return _hash_ints(head + model.parents.tolist() + model.faces.reshape(-1).tolist())


def landmark_hash(landmarks: LandmarkSet) -> str:
    return _hash_ints([len(landmarks)] + landmarks.indices.tolist())


def dump_line(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(dump_line(rec) + "\n")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, allow_nan=False) + "\n")


def read_json(path, what: str = "file") -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {what} {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno}: {exc.msg}") from None


def read_jsonl(path, what: str = "file") -> list[dict]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read {what} {path}: {exc.strerror}") from None
    out = []
    for i, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: line {i}: {exc.msg}") from None
    if not out:
        raise FormatError(f"{path}: empty file")
    return out


def _check_header(path, header: dict, kind: str, required: Sequence[str]) -> None:
    if header.get("kind") != kind:
        raise FormatError(f"{path}: line 1: expected a {kind} header")
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}: line 1: unsupported format_version {header.get('format_version')!r}")
    for key in required:
        if key not in header:
            raise FormatError(f"{path}: line 1: header missing field '{key}'")


# --------------------------------------------------------------------------
# Motion
# --------------------------------------------------------------------------


@dataclass
class Motion:
    """Per-person parameter sequences plus the header that identifies the model."""

    model_name: str
    topology_hash: str
    num_betas: int
    num_joints: int
    fps: float
    person_ids: tuple[str, ...]
    frames: list[dict[str, BodyParams]]

    def sequence(self, person: str) -> list[BodyParams]:
        return [fr[person] for fr in self.frames]


def motion_from_sequences(model: BodyModel, sequences: dict[str, Sequence[BodyParams]], fps: float) -> Motion:
    ids = tuple(sequences)
    T = len(next(iter(sequences.values())))
    frames = [{pid: sequences[pid][f] for pid in ids} for f in range(T)]
    return Motion(model.name, topology_hash(model), model.num_betas, model.num_joints, float(fps), ids, frames)


def write_motion(path, motion: Motion) -> None:
    header = {
        "kind": "motion",
        "format_version": FORMAT_VERSION,
        "model": motion.model_name,
        "topology_hash": motion.topology_hash,
        "num_betas": motion.num_betas,
        "num_joints": motion.num_joints,
        "fps": motion.fps,
        "person_ids": list(motion.person_ids),
    }

    def records():
        yield header
        for f, fr in enumerate(motion.frames):
            for pid in motion.person_ids:
                p = fr[pid]
                yield {"frame": f, "person": pid, "betas": p.betas.tolist(), "pose": p.pose.tolist(),
                       "translation": p.translation.tolist()}

    write_jsonl(path, records())


def read_motion(path) -> Motion:
    rows = read_jsonl(path, "motion file")
    header = rows[0]
    _check_header(path, header, "motion",
                  ("model", "topology_hash", "num_betas", "num_joints", "fps", "person_ids"))
    ids = tuple(header["person_ids"])
    K, B = int(header["num_joints"]), int(header["num_betas"])
    frames: list[dict[str, BodyParams]] = []
    for line, rec in enumerate(rows[1:], 2):
        try:
            f, pid = int(rec["frame"]), rec["person"]
            params = BodyParams(np.asarray(rec["betas"], dtype=np.float64),
                                np.asarray(rec["pose"], dtype=np.float64),
                                np.asarray(rec["translation"], dtype=np.float64))
        except KeyError as exc:
            raise FormatError(f"{path}: line {line}: missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{path}: line {line}: {exc}") from None
        if params.betas.shape != (B,) or params.pose.shape != (K, 3) or params.translation.shape != (3,):
            raise FormatError(f"{path}: line {line}: parameter shapes do not match the header")
        if pid not in ids:
            raise FormatError(f"{path}: line {line}: unknown person {pid!r}")
        if f == len(frames):
            frames.append({})
        elif f != len(frames) - 1:
            raise FormatError(f"{path}: line {line}: frame index {f} out of order")
        if pid in frames[f]:
            raise FormatError(f"{path}: line {line}: duplicate record for person {pid!r}")
        frames[f][pid] = params
    if not frames:
        raise FormatError(f"{path}: no frames")
    for f, fr in enumerate(frames):
        if len(fr) != len(ids):
            raise FormatError(f"{path}: frame {f} is missing a person")
    return Motion(header["model"], header["topology_hash"], B, K, float(header["fps"]), ids, frames)


# --------------------------------------------------------------------------
# Observations
# --------------------------------------------------------------------------


@dataclass
class ObservationFile:
    rig_name: str
    landmark_hash: str
    topology_hash: Optional[str]
    camera_names: tuple[str, ...]
    fps: float
    frames: list[FrameObservations]


def write_observations(path, frames: Sequence[FrameObservations], *, rig_name: str, camera_names,
                       landmarks: LandmarkSet, fps: float, topology: Optional[str] = None) -> None:
    ids = frames[0].person_ids if frames else []
    header = {
        "kind": "observations",
        "format_version": FORMAT_VERSION,
        "rig": rig_name,
        "cameras": list(camera_names),
        "landmark_hash": landmark_hash(landmarks),
        "topology_hash": topology,
        "num_landmarks": len(landmarks),
        "fps": float(fps),
        "person_ids": list(ids),
    }

    def records():
        yield header
        for fr in frames:
            for pid in ids:
                obs = fr.persons[pid]
                for c, name in enumerate(camera_names):
                    yield {"frame": fr.frame, "timestamp": fr.timestamp, "person": pid, "camera": name,
                           "mu": obs.mu[c].tolist(), "sigma": obs.sigma[c].tolist(), "p": obs.p[c].tolist()}

    write_jsonl(path, records())


def read_observations(path) -> ObservationFile:
    rows = read_jsonl(path, "observation file")
    header = rows[0]
    _check_header(path, header, "observations",
                  ("rig", "cameras", "landmark_hash", "num_landmarks", "fps", "person_ids"))
    cams = tuple(header["cameras"])
    ids = tuple(header["person_ids"])
    N = int(header["num_landmarks"])
    cell: dict[tuple[int, str], dict[str, tuple]] = {}
    stamps: dict[int, float] = {}
    order: list[int] = []
    for line, rec in enumerate(rows[1:], 2):
        try:
            f, pid, cam = int(rec["frame"]), rec["person"], rec["camera"]
            mu = np.asarray(rec["mu"], dtype=np.float64)
            sigma = np.asarray(rec["sigma"], dtype=np.float64)
            p = np.asarray(rec["p"], dtype=np.float64)
            stamp = float(rec["timestamp"])
        except KeyError as exc:
            raise FormatError(f"{path}: line {line}: missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{path}: line {line}: {exc}") from None
        if mu.shape != (N, 2) or sigma.shape != (N,) or p.shape != (N,):
            raise FormatError(f"{path}: line {line}: arrays must have {N} landmarks")
        if pid not in ids or cam not in cams:
            raise FormatError(f"{path}: line {line}: unknown person or camera")
        if f not in stamps:
            if order and f < order[-1]:
                raise FormatError(f"{path}: line {line}: frame index {f} out of order")
            stamps[f] = stamp
            order.append(f)
        cell.setdefault((f, pid), {})[cam] = (mu, sigma, p)
    frames = []
    for f in order:
        persons = {}
        for pid in ids:
            per_cam = cell.get((f, pid), {})
            if len(per_cam) != len(cams):
                raise FormatError(f"{path}: frame {f} person {pid}: need one record per camera")
            mu = np.stack([per_cam[c][0] for c in cams])
            sigma = np.stack([per_cam[c][1] for c in cams])
            p = np.stack([per_cam[c][2] for c in cams])
            try:
                persons[pid] = LandmarkObservations(mu, sigma, p)
            except ValueError as exc:
                raise FormatError(f"{path}: frame {f} person {pid}: {exc}") from None
        frames.append(FrameObservations(f, stamps[f], persons))
    return ObservationFile(header["rig"], header["landmark_hash"], header.get("topology_hash"), cams,
                           float(header["fps"]), frames)


# --------------------------------------------------------------------------
# Markers
# --------------------------------------------------------------------------


def markers_to_dict(specs: Sequence[MarkerSpec], topology: Optional[str] = None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "topology_hash": topology,
        "markers": [{"vertex": int(s.vertex), "displacement": [float(a) for a in s.displacement]} for s in specs],
    }


def markers_from_dict(d: dict, source: str = "<markers>") -> tuple[list[MarkerSpec], Optional[str]]:
    if not isinstance(d, dict) or d.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{source}: missing or unsupported format_version")
    specs = []
    for i, m in enumerate(d.get("markers", [])):
        try:
            disp = tuple(float(a) for a in m["displacement"])
            if len(disp) != 3:
                raise ValueError("displacement needs 3 values")
            specs.append(MarkerSpec(int(m["vertex"]), disp))
        except KeyError as exc:
            raise FormatError(f"{source}: marker {i}: missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{source}: marker {i}: {exc}") from None
    return specs, d.get("topology_hash")
