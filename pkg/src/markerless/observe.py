"""Landmark observations: synthetic generation and the detector training losses.

The generator stands in for a learned dense-landmark detector. It projects
ground-truth landmark vertices into every camera, decides visibility with a
z-buffer over all persons jointly, and corrupts the result with seeded noise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .body_model import BodyModel, BodyParams, LandmarkSet, lbs_forward
from .camera import Rig, project_points
from .render import rasterize, vertex_visibility

log = logging.getLogger(__name__)

BEHIND_SIGMA = 1e6
BCE_CLAMP = 1e-7


@dataclass(frozen=True, eq=False)
class LandmarkObservations:
    """One person in one frame, all cameras.

    Attributes:
        mu: (C, N, 2) predicted pixel locations.
        sigma: (C, N) isotropic uncertainty in pixels, > 0.
        p: (C, N) visibility probability in [0, 1].
    """

    mu: np.ndarray
    sigma: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        p = np.asarray(self.p, dtype=np.float64)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "p", p)
        if mu.ndim != 3 or mu.shape[2] != 2 or sigma.shape != mu.shape[:2] or p.shape != mu.shape[:2]:
            raise ValueError("observation arrays must be mu (C, N, 2), sigma (C, N), p (C, N)")
        if not np.all(np.isfinite(mu)):
            raise ValueError("non-finite landmark location")
        if not np.all(sigma > 0):
            raise ValueError("sigma must be positive")
        if np.any((p < 0) | (p > 1)):
            raise ValueError("visibility probability outside [0, 1]")

    @property
    def num_cameras(self) -> int:
        return self.mu.shape[0]

    @property
    def num_landmarks(self) -> int:
        return self.mu.shape[1]


@dataclass
class FrameObservations:
    frame: int
    timestamp: float
    persons: dict[str, LandmarkObservations] = field(default_factory=dict)

    @property
    def person_ids(self) -> list[str]:
        return list(self.persons)


@dataclass(frozen=True)
class NoiseSpec:
    pixel_noise_std: float = 0.0
    sigma_report_jitter: float = 0.0
    visibility_flip_rate: float = 0.0
    rng_seed: int = 0
    sigma_floor: float = 1.0

    def __post_init__(self):
        if min(self.pixel_noise_std, self.sigma_report_jitter, self.visibility_flip_rate) < 0:
            raise ValueError("noise parameters must be nonnegative")
        if self.visibility_flip_rate > 0.5:
            raise ValueError("visibility_flip_rate must be <= 0.5")
        if not self.sigma_floor > 0:
            raise ValueError("sigma_floor must be positive")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Noise-free counterpart of a generated sequence.

    Shapes: pixels (T, P, C, N, 2), depth (T, P, C, N), visible (T, P, C, N),
    vertices (T, P, V, 3), joints (T, P, K, 3).
    """

    person_ids: tuple[str, ...]
    params: list[list[BodyParams]]
    pixels: np.ndarray
    depth: np.ndarray
    visible: np.ndarray
    vertices: np.ndarray
    joints: np.ndarray


def observation_rng(seed: int, frame: int, person: int, camera: int) -> np.random.Generator:
    """Independent stream for one (frame, person, camera) cell.

    Within a cell, draws happen in this order: pixel noise (N, 2), sigma
    jitter (N,), visibility flips (N,), all in landmark order.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(frame), int(person), int(camera)))
    return np.random.Generator(np.random.PCG64(ss))


def _render_truth(model, frame_params, rig, landmarks, occlusion, eps, resolution):
    P, C, N = len(frame_params), len(rig), len(landmarks)
    bodies = [lbs_forward(model, prm) for prm in frame_params]
    verts = np.stack([b.vertices for b in bodies])
    joints = np.stack([b.joints for b in bodies])
    V = model.num_vertices
    all_verts = verts.reshape(-1, 3)
    all_faces = np.concatenate([model.faces + k * V for k in range(P)]) if P else model.faces
    lm = verts[:, landmarks.indices]  # (P, N, 3)
    pix = np.empty((P, C, N, 2))
    depth = np.empty((P, C, N))
    visible = np.zeros((P, C, N), dtype=bool)
    for c, cam in enumerate(rig.cameras):
        uv, z = project_points(cam, lm)
        pix[:, c], depth[:, c] = uv, z
        if occlusion:
            dm, _ = rasterize(all_verts, all_faces, cam, resolution)
            vis_all = vertex_visibility(all_verts, cam, dm, eps).reshape(P, V)
            visible[:, c] = vis_all[:, landmarks.indices]
        else:
            inside = (z > 1e-9) & (uv[..., 0] >= 0) & (uv[..., 0] < cam.width) \
                & (uv[..., 1] >= 0) & (uv[..., 1] < cam.height)
            visible[:, c] = inside
    return verts, joints, pix, depth, visible


def generate_observations(
    model: BodyModel,
    motions: Sequence[Sequence[BodyParams]],
    rig: Rig,
    landmarks: LandmarkSet,
    noise: NoiseSpec = NoiseSpec(),
    *,
    person_ids: Optional[Sequence[str]] = None,
    fps: float = 30.0,
    occlusion: bool = True,
    visibility_eps: float = 0.005,
    resolution=None,
) -> tuple[list[FrameObservations], GroundTruth]:
    """Synthesize noisy landmark observations for every person, camera and frame.

    Args:
        motions: one sequence of BodyParams per person, equal lengths.
        occlusion: if False, every in-frame landmark is marked visible.
        visibility_eps: depth slack of the z-buffer visibility test, meters.
        resolution: optional render size for the visibility z-buffer.

    Returns:
        Per-frame observations and the matching ground truth.
    """
    P = len(motions)
    if P == 0:
        raise ValueError("need at least one person")
    T = len(motions[0])
    if any(len(m) != T for m in motions):
        raise ValueError("all persons need the same number of frames")
    ids = tuple(person_ids) if person_ids is not None else tuple(f"p{k}" for k in range(P))
    C, N = len(rig), len(landmarks)
    frames, gt_pix, gt_depth, gt_vis, gt_verts, gt_joints = [], [], [], [], [], []
    for f in range(T):
        frame_params = [motions[k][f] for k in range(P)]
        verts, joints, pix, depth, visible = _render_truth(
            model, frame_params, rig, landmarks, occlusion, visibility_eps, resolution)
        persons = {}
        for k in range(P):
            mu = np.empty((C, N, 2))
            sigma = np.empty((C, N))
            p = np.empty((C, N))
            for c, cam in enumerate(rig.cameras):
                rng = observation_rng(noise.rng_seed, f, k, c)
                eta = rng.standard_normal((N, 2))
                jit = rng.standard_normal(N)
                flip = rng.random(N) < noise.visibility_flip_rate
                behind = ~(depth[k, c] > 1e-9)
                base = pix[k, c]
                mu[c] = base + noise.pixel_noise_std * eta
                sigma[c] = max(noise.pixel_noise_std, noise.sigma_floor) * np.exp(
                    noise.sigma_report_jitter * jit)
                vis = visible[k, c]
                p[c] = np.where(flip, ~vis, vis).astype(np.float64)
                if behind.any():
                    log.warning("frame %d person %s camera %d: %d landmarks behind the camera",
                                f, ids[k], c, int(behind.sum()))
                    mu[c][behind] = (cam.cx, cam.cy)
                    sigma[c][behind] = BEHIND_SIGMA
                    p[c][behind] = 0.0
            persons[ids[k]] = LandmarkObservations(mu, sigma, p)
        frames.append(FrameObservations(f, f / fps, persons))
        gt_pix.append(pix)
        gt_depth.append(depth)
        gt_vis.append(visible)
        gt_verts.append(verts)
        gt_joints.append(joints)
    truth = GroundTruth(
        person_ids=ids,
        params=[list(m) for m in motions],
        pixels=np.stack(gt_pix),
        depth=np.stack(gt_depth),
        visible=np.stack(gt_vis),
        vertices=np.stack(gt_verts),
        joints=np.stack(gt_joints),
    )
    return frames, truth


def gnll_score(mu, sigma, mu_true, lambda_mu=None) -> float:
    """Weighted Gaussian negative log likelihood over landmarks.

    ``sum_i lambda_i * (log sigma_i^2 + ||mu_i - mu'_i||^2 / (2 sigma_i^2))``
    """
    mu = np.asarray(mu, dtype=np.float64).reshape(-1, 2)
    mu_true = np.asarray(mu_true, dtype=np.float64).reshape(-1, 2)
    sigma = np.asarray(sigma, dtype=np.float64).reshape(-1)
    if mu.shape != mu_true.shape or sigma.shape[0] != mu.shape[0]:
        raise ValueError("mismatched landmark counts")
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    lam = np.ones(sigma.shape[0]) if lambda_mu is None else np.asarray(lambda_mu, dtype=np.float64)
    r2 = ((mu - mu_true) ** 2).sum(axis=1)
    return float(np.sum(lam * (np.log(sigma ** 2) + r2 / (2.0 * sigma ** 2))))


def bce_visibility_score(p_pred, p_true, lambda_p=None) -> float:
    """Weighted binary cross entropy.

    Log arguments are floored at 1e-7, so a confidently wrong prediction costs
    ``-log(1e-7)`` while an exactly right one costs nothing.
    """
    p = np.asarray(p_pred, dtype=np.float64).reshape(-1)
    y = np.asarray(p_true, dtype=np.float64).reshape(-1)
    if p.shape != y.shape:
        raise ValueError("mismatched landmark counts")
    lam = np.ones(p.shape[0]) if lambda_p is None else np.asarray(lambda_p, dtype=np.float64)
    pos = np.log(np.maximum(p, BCE_CLAMP))
    neg = np.log(np.maximum(1.0 - p, BCE_CLAMP))
    return float(np.sum(lam * (-y * pos - (1.0 - y) * neg)))
