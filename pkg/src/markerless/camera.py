"""Pinhole cameras: projection, back-projection, ray triangulation and calibration files.

Conventions: extrinsics map world to camera (``x_cam = R @ x_world + t``),
+z looks forward, image origin is the top-left corner with x right and y
down. No lens distortion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

FORMAT_VERSION = 1
MIN_DEPTH = 1e-9


class BehindCameraError(ValueError):
    """Point lies on or behind the camera plane."""


class DegenerateRaysError(ValueError):
    """Rays are (nearly) parallel, so no unique closest point exists."""


class CalibrationError(ValueError):
    """Malformed calibration file."""


@dataclass(frozen=True, eq=False)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image size must be positive")
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-8 or abs(np.linalg.det(R) - 1.0) > 1e-8:
            raise ValueError("rotation must be orthonormal with determinant +1")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def scaled(self, width: int, height: int) -> "Camera":
        """Same camera resampled to another image size."""
        if width == self.width and height == self.height:
            return self
        sx, sy = width / self.width, height / self.height
        return Camera(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy,
                      self.rotation, self.translation, int(width), int(height))


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray


@dataclass(frozen=True, eq=False)
class Rig:
    cameras: tuple[Camera, ...]
    names: tuple[str, ...]
    name: str = "rig"

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.cameras) < 1:
            raise ValueError("rig needs at least one camera")
        if len(self.names) != len(self.cameras):
            raise ValueError("one name per camera required")
        if len(set(self.names)) != len(self.names):
            raise ValueError("camera names must be unique")

    def __len__(self) -> int:
        return len(self.cameras)

    def __iter__(self):
        return iter(self.cameras)

    def __getitem__(self, i) -> Camera:
        return self.cameras[i]


def to_camera_frame(camera: Camera, points) -> np.ndarray:
    return np.asarray(points, dtype=np.float64) @ camera.rotation.T + camera.translation


def project_points(camera: Camera, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of (..., 3) world points.

    Returns pixels (..., 2) and depths (...). Points with depth <= MIN_DEPTH
    get NaN pixels; the caller decides how to treat them.
    """
    X = to_camera_frame(camera, points)
    z = X[..., 2]
    ok = z > MIN_DEPTH
    safe = np.where(ok, z, 1.0)
    uv = np.stack([camera.fx * X[..., 0] / safe + camera.cx,
                   camera.fy * X[..., 1] / safe + camera.cy], axis=-1)
    uv[~ok] = np.nan
    return uv, z


def project(camera: Camera, point) -> tuple[np.ndarray, float]:
    """Pixel and depth of one world point; raises BehindCameraError if z <= 1e-9."""
    X = to_camera_frame(camera, np.asarray(point, dtype=np.float64).reshape(3))
    if not X[2] > MIN_DEPTH:
        raise BehindCameraError(f"point depth {X[2]:.3g} is not in front of the camera")
    uv = np.array([camera.fx * X[0] / X[2] + camera.cx, camera.fy * X[1] / X[2] + camera.cy])
    return uv, float(X[2])


def backproject_ray(camera: Camera, pixel) -> Ray:
    u, v = np.asarray(pixel, dtype=np.float64).reshape(2)
    d_cam = np.array([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, 1.0])
    d = camera.rotation.T @ d_cam
    return Ray(camera.center, d / np.linalg.norm(d))


def triangulate_midpoint(rays: Sequence[Ray]) -> np.ndarray:
    """Point minimizing the summed squared distance to all rays."""
    if len(rays) < 2:
        raise DegenerateRaysError("need at least two rays")
    A = np.zeros((3, 3))
    b = np.zeros(3)
    for ray in rays:
        d = np.asarray(ray.direction, dtype=np.float64)
        d = d / np.linalg.norm(d)
        P = np.eye(3) - np.outer(d, d)
        A += P
        b += P @ np.asarray(ray.origin, dtype=np.float64)
    w = np.linalg.eigvalsh(A)
    if w[0] <= 1e-10 * w[-1]:
        raise DegenerateRaysError("rays are parallel; closest point is not unique")
    return np.linalg.solve(A, b)


def look_at(position, target, up=(0.0, 1.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera rotation and translation for a camera at ``position`` facing ``target``."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    forward /= np.linalg.norm(forward)
    down = -np.asarray(up, dtype=np.float64)
    right = np.cross(down, forward)
    n = np.linalg.norm(right)
    if n < 1e-9:
        raise ValueError("viewing direction is parallel to the up vector")
    right /= n
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    return R, -R @ position


def ring_rig(
    n: int,
    radius: float,
    height: float,
    target=(0.0, 0.0, 0.0),
    image_size: tuple[int, int] = (2056, 1504),
    focal: float | None = None,
) -> Rig:
    """``n`` cameras evenly spaced on a horizontal circle, all looking at ``target``.

    The circle is centered above the target's ground position at the given
    camera height (y is up). Focal length defaults to the image width.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if radius <= 0:
        raise ValueError("radius must be positive")
    target = np.asarray(target, dtype=np.float64)
    w, h = int(image_size[0]), int(image_size[1])
    f = float(w if focal is None else focal)
    cams, names = [], []
    for i in range(n):
        a = 2.0 * np.pi * i / n
        pos = np.array([target[0] + radius * np.cos(a), height, target[2] + radius * np.sin(a)])
        R, t = look_at(pos, target)
        cams.append(Camera(f, f, w / 2.0, h / 2.0, R, t, w, h))
        names.append(f"cam{i:02d}")
    return Rig(tuple(cams), tuple(names), name=f"ring{n}")


def rig_to_dict(rig: Rig) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "name": rig.name,
        "cameras": [
            {
                "name": name,
                "fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
                "rotation": c.rotation.reshape(-1).tolist(),
                "translation": c.translation.tolist(),
                "width": c.width, "height": c.height,
            }
            for name, c in zip(rig.names, rig.cameras)
        ],
    }


_CAMERA_FIELDS = ("name", "fx", "fy", "cx", "cy", "rotation", "translation", "width", "height")


def rig_from_dict(d: dict, source: str = "<calibration>") -> Rig:
    if not isinstance(d, dict) or d.get("format_version") != FORMAT_VERSION:
        raise CalibrationError(f"{source}: missing or unsupported format_version")
    cams_raw = d.get("cameras")
    if not isinstance(cams_raw, list) or not cams_raw:
        raise CalibrationError(f"{source}: 'cameras' must be a nonempty array")
    cams, names = [], []
    for i, c in enumerate(cams_raw):
        for key in _CAMERA_FIELDS:
            if key not in c:
                raise CalibrationError(f"{source}: camera {i}: missing field '{key}'")
        if len(c["rotation"]) != 9:
            raise CalibrationError(f"{source}: camera {i}: 'rotation' needs 9 values")
        if len(c["translation"]) != 3:
            raise CalibrationError(f"{source}: camera {i}: 'translation' needs 3 values")
        try:
            cams.append(Camera(float(c["fx"]), float(c["fy"]), float(c["cx"]), float(c["cy"]),
                               np.reshape(c["rotation"], (3, 3)), c["translation"],
                               int(c["width"]), int(c["height"])))
        except (TypeError, ValueError) as exc:
            raise CalibrationError(f"{source}: camera {i} ({c['name']}): {exc}") from None
        names.append(str(c["name"]))
    try:
        return Rig(tuple(cams), tuple(names), name=str(d.get("name", "rig")))
    except ValueError as exc:
        raise CalibrationError(f"{source}: {exc}") from None


def save_rig(rig: Rig, path) -> None:
    Path(path).write_text(json.dumps(rig_to_dict(rig), indent=1) + "\n")


def load_rig(path) -> Rig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CalibrationError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return rig_from_dict(data, str(path))
