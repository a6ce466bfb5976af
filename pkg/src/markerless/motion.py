"""Seeded procedural motion: smooth per-joint sinusoids in axis-angle space."""

from __future__ import annotations

import numpy as np

from .body_model import BodyModel, BodyParams


def procedural_motion(
    model: BodyModel,
    frames: int,
    fps: float = 30.0,
    *,
    frequency: float = 0.5,
    amplitude: float = 0.3,
    seed: int = 0,
    translation=(0.0, 1.0, 0.0),
    yaw: float | None = None,
    yaw_range: float = 1.0,
    betas_std: float = 0.5,
    drift: float = 0.05,
) -> list[BodyParams]:
    """Smooth random motion for one person.

    Each non-root joint axis follows ``offset + a * sin(2 pi f t + phase)``
    with amplitudes up to ``amplitude`` radians and frequencies near
    ``frequency`` Hz. The root gets a fixed heading (``yaw``, random in
    ``[-yaw_range, yaw_range]`` when omitted) plus a gentle sway, and the
    translation drifts sinusoidally by ``drift`` meters. Shape is constant.
    """
    if frames < 1:
        raise ValueError("frames must be >= 1")
    if fps <= 0:
        raise ValueError("fps must be positive")
    rng = np.random.default_rng(seed)
    K, B = model.num_joints, model.num_betas
    betas = rng.normal(0.0, betas_std, B)
    amp = amplitude * rng.uniform(0.3, 1.0, (K, 3))
    offset = rng.normal(0.0, 0.5 * amplitude, (K, 3))
    freq = frequency * rng.uniform(0.7, 1.3, (K, 3))
    phase = rng.uniform(0.0, 2.0 * np.pi, (K, 3))
    heading = rng.uniform(-yaw_range, yaw_range) if yaw is None else float(yaw)
    amp[0] *= 0.3
    offset[0] = (0.0, heading, 0.0)
    t_phase = rng.uniform(0.0, 2.0 * np.pi, 3)
    base = np.asarray(translation, dtype=np.float64)
    out = []
    for f in range(frames):
        time = f / fps
        pose = offset + amp * np.sin(2.0 * np.pi * freq * time + phase)
        sway = drift * np.sin(2.0 * np.pi * frequency * 0.5 * time + t_phase)
        sway[1] *= 0.2
        out.append(BodyParams(betas.copy(), pose, base + sway))
    return out
