"""Z-buffer rasterization of triangle meshes into depth maps and silhouettes.

Pixel (row i, col j) covers [j, j+1) x [i, i+1) in image coordinates and is
sampled at its center (j + 0.5, i + 0.5). Depth is camera-space z,
interpolated perspective-correctly. No back-face culling.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import Camera, to_camera_frame

NEAR = 1e-6
_CHUNK_PAIRS = 2_000_000


@dataclass(frozen=True, eq=False)
class DepthMap:
    width: int
    height: int
    depth: np.ndarray  # (height, width), +inf where empty


@dataclass(frozen=True, eq=False)
class SilhouetteMask:
    width: int
    height: int
    bits: np.ndarray  # (height, width) bool


def _resolve(camera: Camera, resolution) -> Camera:
    if resolution is None:
        return camera
    w, h = int(resolution[0]), int(resolution[1])
    if w <= 0 or h <= 0:
        raise ValueError("resolution must be positive")
    return camera.scaled(w, h)


def rasterize(vertices, faces, camera: Camera, resolution=None) -> tuple[DepthMap, SilhouetteMask]:
    """Render nearest depth and coverage of a mesh.

    Faces with any vertex on or behind the near plane are skipped.

    Args:
        vertices: (V, 3) world positions.
        faces: (F, 3) vertex indices.
        camera: viewing camera.
        resolution: optional (width, height); intrinsics are rescaled to it.
    """
    cam = _resolve(camera, resolution)
    W, H = cam.width, cam.height
    depth = np.full(H * W, np.inf)
    X = to_camera_frame(cam, vertices)
    faces = np.asarray(faces, dtype=np.int64)
    tri = X[faces]  # (F, 3, 3)
    z = tri[..., 2]
    keep = np.all(z > NEAR, axis=1)
    tri, z = tri[keep], z[keep]
    if tri.shape[0]:
        u = cam.fx * tri[..., 0] / z + cam.cx
        v = cam.fy * tri[..., 1] / z + cam.cy
        area = (u[:, 1] - u[:, 0]) * (v[:, 2] - v[:, 0]) - (u[:, 2] - u[:, 0]) * (v[:, 1] - v[:, 0])
        x0 = np.clip(np.ceil(u.min(axis=1) - 0.5), 0, W).astype(np.int64)
        x1 = np.clip(np.floor(u.max(axis=1) - 0.5), -1, W - 1).astype(np.int64)
        y0 = np.clip(np.ceil(v.min(axis=1) - 0.5), 0, H).astype(np.int64)
        y1 = np.clip(np.floor(v.max(axis=1) - 0.5), -1, H - 1).astype(np.int64)
        nx = np.maximum(x1 - x0 + 1, 0)
        ny = np.maximum(y1 - y0 + 1, 0)
        valid = (np.abs(area) > 1e-12) & (nx > 0) & (ny > 0)
        ids = np.nonzero(valid)[0]
        counts = (nx * ny)[ids]
        chunk = (np.cumsum(counts) - counts) // _CHUNK_PAIRS
        bounds = np.concatenate([[0], np.nonzero(np.diff(chunk))[0] + 1, [ids.size]])
        for start, stop in zip(bounds[:-1], bounds[1:]):
            _raster_chunk(depth, W, ids[start:stop], counts[start:stop],
                          u, v, z, area, x0, nx, y0)
    depth = depth.reshape(H, W)
    return DepthMap(W, H, depth), SilhouetteMask(W, H, np.isfinite(depth))


def _raster_chunk(depth, W, ids, counts, u, v, z, area, x0, nx, y0):
    f = np.repeat(ids, counts)
    first = np.cumsum(counts) - counts
    local = np.arange(f.size) - np.repeat(first, counts)
    px = x0[f] + local % nx[f]
    py = y0[f] + local // nx[f]
    sx = px + 0.5
    sy = py + 0.5
    uf, vf = u[f], v[f]
    # edge functions opposite each vertex
    w0 = (uf[:, 2] - uf[:, 1]) * (sy - vf[:, 1]) - (vf[:, 2] - vf[:, 1]) * (sx - uf[:, 1])
    w1 = (uf[:, 0] - uf[:, 2]) * (sy - vf[:, 2]) - (vf[:, 0] - vf[:, 2]) * (sx - uf[:, 2])
    w2 = (uf[:, 1] - uf[:, 0]) * (sy - vf[:, 0]) - (vf[:, 1] - vf[:, 0]) * (sx - uf[:, 0])
    a = area[f]
    l0, l1, l2 = w0 / a, w1 / a, w2 / a
    inside = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
    zf = z[f]
    inv = l0 / zf[:, 0] + l1 / zf[:, 1] + l2 / zf[:, 2]
    d = 1.0 / inv[inside]
    np.minimum.at(depth, (py * W + px)[inside], d)


def vertex_visibility(vertices, camera: Camera, depthmap: DepthMap, eps: float = 0.005) -> np.ndarray:
    """Vertices whose depth is at most the depth map at their pixel plus ``eps``.

    Vertices projecting outside the image or behind the camera are not visible.
    """
    cam = _resolve(camera, (depthmap.width, depthmap.height))
    X = to_camera_frame(cam, vertices)
    z = X[:, 2]
    front = z > NEAR
    zs = np.where(front, z, 1.0)
    u = cam.fx * X[:, 0] / zs + cam.cx
    v = cam.fy * X[:, 1] / zs + cam.cy
    px = np.floor(u)
    py = np.floor(v)
    inside = front & (px >= 0) & (px < cam.width) & (py >= 0) & (py < cam.height)
    out = np.zeros(z.shape[0], dtype=bool)
    i = np.nonzero(inside)[0]
    d = depthmap.depth[py[i].astype(np.int64), px[i].astype(np.int64)]
    out[i] = z[i] <= d + eps
    return out


def silhouette_iou(a: SilhouetteMask, b: SilhouetteMask) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    if a.bits.shape != b.bits.shape:
        raise ValueError(f"mask shapes differ: {a.bits.shape} vs {b.bits.shape}")
    union = np.count_nonzero(a.bits | b.bits)
    if union == 0:
        return 1.0
    return np.count_nonzero(a.bits & b.bits) / union


def write_pgm(mask: SilhouetteMask, path) -> None:
    """Binary PGM (P5), 255 inside and 0 outside."""
    data = np.where(mask.bits, 255, 0).astype(np.uint8)
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def read_pgm(path) -> SilhouetteMask:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5" or int(parts[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit P5 PGM")
    w, h = int(parts[1]), int(parts[2])
    data = np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)
    return SilhouetteMask(w, h, data > 127)


def write_depth(depthmap: DepthMap, path) -> None:
    """Raw little-endian float32 depth behind a 16-byte ``DPTH`` header."""
    header = b"DPTH" + struct.pack("<III", depthmap.width, depthmap.height, 0)
    Path(path).write_bytes(header + depthmap.depth.astype("<f4").tobytes())


def read_depth(path) -> DepthMap:
    raw = Path(path).read_bytes()
    if raw[:4] != b"DPTH":
        raise ValueError(f"{path}: bad depth magic")
    w, h, _ = struct.unpack("<III", raw[4:16])
    depth = np.frombuffer(raw[16:], dtype="<f4").reshape(h, w).astype(np.float64)
    return DepthMap(w, h, depth)
