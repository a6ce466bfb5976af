"""Synthetic scene description for the ``synth`` command.

Example::

    {
      "model": "builtin:toy",
      "frames": 30, "fps": 30,
      "persons": [
        {"procedural": {"frequency": 0.5, "amplitude": 0.3, "seed": 0, "translation": [0, 1, 0]}},
        {"file": "other.jsonl", "person": "p0"}
      ],
      "rig": {"ring": {"n": 8, "radius": 3.0, "height": 1.7}},
      "noise": {"pixel_noise_std": 2.0, "sigma_report_jitter": 0.2, "rng_seed": 7},
      "landmarks": {"fps": {"n": 128, "seed_index": 0}},
      "occlusion": true,
      "dumps": {"masks": false, "depth": false, "resolution": [512, 376]}
    }

Relative paths are resolved against the directory of the config file.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .observe import NoiseSpec


class SceneError(ValueError):
    """Invalid scene config; the message names the offending field."""


@dataclass(frozen=True)
class ProceduralSource:
    frequency: float = 0.5
    amplitude: float = 0.3
    seed: int = 0
    translation: tuple[float, float, float] = (0.0, 1.0, 0.0)
    yaw: Optional[float] = None
    betas: Optional[tuple[float, ...]] = None
    betas_std: float = 0.5
    drift: float = 0.05


@dataclass(frozen=True)
class FileSource:
    path: Path
    person: Optional[str] = None


@dataclass(frozen=True)
class RingSource:
    n: int = 8
    radius: float = 3.0
    height: float = 1.7
    target: tuple[float, float, float] = (0.0, 1.0, 0.0)
    image_size: tuple[int, int] = (1028, 752)
    focal: Optional[float] = None


@dataclass(frozen=True)
class LandmarkSource:
    n: int = 128
    seed_index: int = 0
    weights: Optional[dict] = None
    path: Optional[Path] = None


@dataclass(frozen=True)
class Dumps:
    masks: bool = False
    depth: bool = False
    resolution: Optional[tuple[int, int]] = None


@dataclass(frozen=True)
class SceneConfig:
    model: str = "builtin:toy"
    frames: int = 30
    fps: float = 30.0
    persons: tuple = (ProceduralSource(),)
    rig: object = RingSource()
    noise: NoiseSpec = NoiseSpec()
    landmarks: LandmarkSource = LandmarkSource()
    occlusion: bool = True
    visibility_eps: float = 0.005
    dumps: Dumps = field(default_factory=Dumps)


def _build(cls, raw, where: str, base: Path, paths=()):
    if not isinstance(raw, dict):
        raise SceneError(f"{where}: expected an object")
    names = {f.name for f in fields(cls)}
    for key in raw:
        if key not in names:
            raise SceneError(f"{where}.{key}: unknown field")
    kwargs = {}
    for key, value in raw.items():
        if key in paths:
            value = base / value
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise SceneError(f"{where}: {exc}") from None


def _person(raw, i: int, base: Path):
    where = f"persons[{i}]"
    if not isinstance(raw, dict) or len(raw) != 1:
        raise SceneError(f"{where}: expected exactly one of 'procedural' or 'file'")
    if "procedural" in raw:
        src = _build(ProceduralSource, raw["procedural"], f"{where}.procedural", base)
        if src.frequency < 0 or src.amplitude < 0:
            raise SceneError(f"{where}.procedural: frequency and amplitude must be >= 0")
        if len(src.translation) != 3:
            raise SceneError(f"{where}.procedural.translation: needs 3 values")
        return src
    if "file" in raw:
        spec = raw["file"]
        if isinstance(spec, str):
            return FileSource(base / spec)
        return _build(FileSource, spec, f"{where}.file", base, paths=("path",))
    raise SceneError(f"{where}: expected 'procedural' or 'file'")


def scene_from_dict(raw: dict, base=".") -> SceneConfig:
    base = Path(base)
    if not isinstance(raw, dict):
        raise SceneError("scene config must be an object")
    known = {f.name for f in fields(SceneConfig)}
    for key in raw:
        if key not in known:
            raise SceneError(f"{key}: unknown field")
    kw = {}
    if "model" in raw:
        kw["model"] = raw["model"] if raw["model"].startswith("builtin:") else str(base / raw["model"])
    if "frames" in raw:
        if not isinstance(raw["frames"], int) or raw["frames"] < 1:
            raise SceneError("frames: must be an integer >= 1")
        kw["frames"] = raw["frames"]
    if "fps" in raw:
        if not isinstance(raw["fps"], (int, float)) or not raw["fps"] > 0:
            raise SceneError("fps: must be > 0")
        kw["fps"] = float(raw["fps"])
    if "persons" in raw:
        persons = raw["persons"]
        if isinstance(persons, int):
            if persons < 1:
                raise SceneError("persons: count must be >= 1")
            persons = [{"procedural": {"seed": k, "translation": [1.2 * k, 1.0, 0.0]}} for k in range(persons)]
        if not isinstance(persons, list) or not persons:
            raise SceneError("persons: must be a count or a nonempty list")
        kw["persons"] = tuple(_person(p, i, base) for i, p in enumerate(persons))
    if "rig" in raw:
        rig = raw["rig"]
        if not isinstance(rig, dict) or len(rig) != 1 or not ({"ring", "file"} & set(rig)):
            raise SceneError("rig: expected exactly one of 'ring' or 'file'")
        if "ring" in rig:
            ring = _build(RingSource, rig["ring"], "rig.ring", base)
            if ring.n < 2 or not ring.radius > 0:
                raise SceneError("rig.ring: need n >= 2 and radius > 0")
            kw["rig"] = ring
        else:
            kw["rig"] = base / rig["file"]
    if "noise" in raw:
        kw["noise"] = _build(NoiseSpec, raw["noise"], "noise", base)
    if "landmarks" in raw:
        lm = raw["landmarks"]
        if not isinstance(lm, dict) or len(lm) != 1 or not ({"fps", "file"} & set(lm)):
            raise SceneError("landmarks: expected exactly one of 'fps' or 'file'")
        if "fps" in lm:
            src = _build(LandmarkSource, lm["fps"], "landmarks.fps", base)
            if src.n < 1:
                raise SceneError("landmarks.fps.n: must be >= 1")
            kw["landmarks"] = src
        else:
            kw["landmarks"] = LandmarkSource(path=base / lm["file"])
    if "occlusion" in raw:
        kw["occlusion"] = bool(raw["occlusion"])
    if "visibility_eps" in raw:
        kw["visibility_eps"] = float(raw["visibility_eps"])
    if "dumps" in raw:
        kw["dumps"] = _build(Dumps, raw["dumps"], "dumps", base)
    return SceneConfig(**kw)
