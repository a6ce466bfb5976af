"""Initialization and the three-stage per-sequence fit."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from ..body_model import BodyModel, BodyParams, LandmarkSet, lbs_forward
from ..camera import DegenerateRaysError, Rig, backproject_ray, triangulate_midpoint
from ..observe import FrameObservations, LandmarkObservations
from .config import BLOCKS, FitConfig, StageConfig
from .energy import EnergyBreakdown, FrameObjective, PriorWeights
from .lbfgs import LbfgsOptions, NonFiniteObjectiveError, lbfgs_minimize

log = logging.getLogger(__name__)


class InitializationError(RuntimeError):
    """Not enough usable views to place a person."""


class FitDivergenceError(RuntimeError):
    """A stage produced a non-finite energy."""

    def __init__(self, person: str, stage: str, frame: int, x):
        super().__init__(f"person {person}: stage {stage} diverged at frame {frame}")
        self.person, self.stage, self.frame = person, stage, frame
        self.x = np.asarray(x)


@dataclass
class StageLog:
    stage: str
    frame: int
    iterations: int
    status: str
    gradient_norm: float
    objective: float


@dataclass
class PersonFit:
    person: str
    params: list[BodyParams]
    energies: list[EnergyBreakdown]
    init_params: list[BodyParams]
    log: list[StageLog] = field(default_factory=list)
    trace: list[dict] = field(default_factory=list)


@dataclass
class FitResult:
    persons: dict[str, PersonFit]
    wall_time: float

    def params(self, person: str) -> list[BodyParams]:
        return self.persons[person].params


# --------------------------------------------------------------------------
# Initialization
# --------------------------------------------------------------------------


def init_translation(obs: LandmarkObservations, rig: Rig, p_min: float = 0.5) -> np.ndarray:
    """Closest point to the rays through each camera's visibility-weighted landmark centroid."""
    rays = []
    for c, cam in enumerate(rig.cameras):
        p = obs.p[c]
        use = p >= p_min
        if not np.any(use) or not np.sum(p[use]) > 0:
            continue
        w = p[use]
        centroid = (w[:, None] * obs.mu[c][use]).sum(axis=0) / w.sum()
        rays.append(backproject_ray(cam, centroid))
    if len(rays) < 2:
        raise InitializationError(f"need at least 2 cameras with visible landmarks, have {len(rays)}")
    try:
        point = triangulate_midpoint(rays)
    except DegenerateRaysError as exc:
        raise InitializationError(str(exc)) from None
    centers = np.stack([cam.center for cam in rig.cameras])
    reach = np.linalg.norm(centers - centers.mean(axis=0), axis=1).max()
    if len(rig) > 1 and np.linalg.norm(point - centers.mean(axis=0)) > max(reach, 1e-9) * 1.5:
        log.warning("initial position %s lies outside the camera volume", np.round(point, 3))
    return point


def init_pose(model: BodyModel, config: FitConfig) -> np.ndarray:
    """Zero pose with the configured arm angles; the root orientation stays zero."""
    pose = np.zeros((model.num_joints, 3))
    for name, aa in config.init_pose.items():
        if name not in model.joint_names:
            log.debug("init_pose: model has no joint %s", name)
            continue
        j = model.joint_names.index(name)
        if j == 0:
            continue
        pose[j] = aa
    return pose


def initial_params(model, landmarks, rig, obs, config) -> BodyParams:
    """Body in the init pose whose landmark centroid sits on the triangulated point."""
    point = init_translation(obs, rig, config.p_min)
    params = BodyParams(np.zeros(model.num_betas), init_pose(model, config), np.zeros(3))
    centroid = lbs_forward(model, params).vertices[landmarks.indices].mean(axis=0)
    params.translation = point - centroid
    return params


# --------------------------------------------------------------------------
# Stages
# --------------------------------------------------------------------------


def block_indices(model: BodyModel, blocks: Sequence[str]) -> np.ndarray:
    K, B = model.num_joints, model.num_betas
    spans = {
        "translation": (0, 3),
        "root": (3, 6),
        "body": (6, 3 + 3 * K),
        "betas": (3 + 3 * K, 3 + 3 * K + B),
    }
    return np.concatenate([np.arange(*spans[b]) for b in BLOCKS if b in blocks]).astype(np.int64)


def _whitening(objective: FrameObjective, x, idx, floor: float, diagonal: bool = False) -> np.ndarray:
    """Linear map ``M`` with ``M.T @ H @ M`` close to identity for the Gauss-Newton Hessian ``H``.

    Minimizing over ``y`` with ``x = x0 + M @ y`` leaves the minimizer
    unchanged but undoes the coupling and the scale differences between
    translation, joint angles and shape coefficients. Eigenvalues below
    ``floor`` times the largest are raised to it, which caps the step
    along nearly unobserved directions. ``diagonal`` only rescales each
    variable; its shorter, less aggressive steps are safer far from the
    optimum, where the robust loss has spurious basins.
    """
    H = objective.gauss_newton(x)[np.ix_(idx, idx)]
    if diagonal:
        d = np.diag(H)
        top = d.max() if d.size and d.max() > 0 else 1.0
        return np.diag(1.0 / np.sqrt(np.maximum(d, 1e-10 * top)))
    w, U = np.linalg.eigh(H)
    top = w.max() if w.size and w.max() > 0 else 1.0
    return U / np.sqrt(np.maximum(w, floor * top))


def _wrap_pose(x, K):
    """Replace axis-angles longer than pi by the equivalent shorter vector.

    The rotation is unchanged, but the parameterization stays away from the
    singular shell at |theta| = 2 pi.
    """
    pose = x[3:3 + 3 * K].reshape(K, 3)
    norms = np.linalg.norm(pose, axis=1)
    for j in np.flatnonzero(norms > np.pi):
        pose[j] *= 1.0 - 2.0 * np.pi / norms[j]
    return x


def _solve_stage(model, landmarks, rig, obs, config: FitConfig, stage: StageConfig, x0, prev_pose,
                 frame, person, sink):
    priors = None
    if stage.priors:
        priors = PriorWeights(config.lambda_shape, config.lambda_pose,
                              config.lambda_temp if stage.temporal else 0.0)
    objective = FrameObjective(model, landmarks, rig, obs, stage.estimator, config.p_min, priors,
                               prev_pose if stage.temporal else None)
    idx = block_indices(model, stage.blocks)
    x = np.array(x0, dtype=np.float64)
    budget = stage.iterations_for(frame)
    done = 0
    grad = np.zeros(idx.size)
    status = "converged" if budget == 0 else "max_iterations"

    # L-BFGS runs in rounds; each round re-whitens the active block around
    # the current point so the metric tracks the changing pose. The first
    # rounds use the diagonal metric only.
    while done < budget:
        base = _wrap_pose(x.copy(), model.num_joints)
        origin = base[idx].copy()
        if config.precondition:
            metric = _whitening(objective, base, idx, config.precondition_floor,
                                diagonal=done < config.precondition_warmup)
        else:
            metric = np.eye(idx.size)
        offset = done

        def fun(y):
            full = base.copy()
            full[idx] = origin + metric @ y
            f, g = objective.value_and_grad(full)
            return f, metric.T @ g[idx]

        def record(rec):
            if rec.iteration == 0 and offset > 0:
                return
            sink.append({"stage": stage.name, "frame": frame, "person": person,
                         "iteration": rec.iteration + offset, "objective": rec.objective,
                         "gradient_norm": rec.gradient_norm, "step": rec.step})

        rounds = budget - done if not config.precondition else min(budget - done, config.precondition_interval)
        opts = LbfgsOptions(history=config.history, max_iterations=rounds,
                            gradient_tolerance=stage.gradient_tolerance)
        try:
            res = lbfgs_minimize(fun, np.zeros(idx.size), opts, callback=record)
        except NonFiniteObjectiveError as exc:
            full = base.copy()
            full[idx] = origin + metric @ exc.x
            raise FitDivergenceError(person, stage.name, frame, full) from None
        x = base.copy()
        x[idx] = origin + metric @ res.x
        done += res.iterations
        grad = res.grad
        status = res.status
        if res.status == "converged" or (res.status == "line_search_failed" and res.iterations == 0):
            break
    if done >= budget and status != "converged":
        status = "max_iterations"
    if budget == 0:
        breakdown0, g0 = objective.evaluate(x, need_grad=True)
        grad = g0[idx]
    if objective.behind_count:
        log.debug("person %s frame %d stage %s: %d landmarks behind a camera",
                  person, frame, stage.name, objective.behind_count)
    breakdown, _ = objective.evaluate(x, need_grad=False)
    entry = StageLog(stage.name, frame, done, status, float(np.linalg.norm(grad)), breakdown.total)
    return x, breakdown, entry


def fit_person(model: BodyModel, rig: Rig, landmarks: LandmarkSet,
               observations: Sequence[LandmarkObservations], config: FitConfig,
               person: str = "p0") -> PersonFit:
    """Run the three stages over one person's sequence, frames in causal order."""
    T = len(observations)
    if T == 0:
        raise ValueError("empty observation sequence")
    K, B = model.num_joints, model.num_betas
    s1, s2, s3 = config.stages
    trace: list[dict] = []
    logs: list[StageLog] = []

    def unpack(x):
        return BodyParams.unpack(x, K, B)

    inits = [initial_params(model, landmarks, rig, observations[0], config)]
    for f in range(1, T):
        try:
            inits.append(initial_params(model, landmarks, rig, observations[f], config))
        except InitializationError:
            inits.append(inits[-1].copy())

    # stage 1: rigid placement, reprojection only; later frames warm start
    rigid = []
    x = inits[0].pack()
    for f in range(T):
        x, _, entry = _solve_stage(model, landmarks, rig, observations[f], config, s1, x, None, f, person, trace)
        rigid.append(x)
        logs.append(entry)

    # stage 2: pose, shape and translation
    full = []
    for f in range(T):
        if f == 0:
            x0 = rigid[0]
        else:
            x0 = full[-1].copy()
            x0[:3] += rigid[f][:3] - rigid[f - 1][:3]
        prev = None if f == 0 else unpack(full[-1]).pose
        x, _, entry = _solve_stage(model, landmarks, rig, observations[f], config, s2, x0, prev, f, person, trace)
        full.append(x)
        logs.append(entry)

    # stage 3: shape frozen to the per-person median, pose refined
    bslice = slice(3 + 3 * K, 3 + 3 * K + B)
    betas = np.median(np.stack([x[bslice] for x in full]), axis=0)
    out, energies = [], []
    for f in range(T):
        x0 = full[f].copy()
        x0[bslice] = betas
        prev = None if f == 0 else unpack(out[-1]).pose
        x, breakdown, entry = _solve_stage(model, landmarks, rig, observations[f], config, s3, x0, prev, f,
                                           person, trace)
        out.append(x)
        energies.append(breakdown)
        logs.append(entry)

    return PersonFit(person, [unpack(x) for x in out], energies, inits, logs, trace)


def fit_sequence(model: BodyModel, rig: Rig, landmarks: LandmarkSet, frames: Sequence[FrameObservations],
                 config: FitConfig = FitConfig(), threads: int = 1,
                 persons: Optional[Sequence[str]] = None) -> FitResult:
    """Fit every person independently; persons may run on parallel threads.

    Results do not depend on ``threads``: each person is a self-contained
    sequential computation and BLAS is pinned to one thread inside it.
    """
    if not frames:
        raise ValueError("empty sequence")
    ids = list(persons) if persons is not None else frames[0].person_ids
    for fr in frames:
        missing = set(ids) - set(fr.persons)
        if missing:
            raise ValueError(f"frame {fr.frame}: no observations for person {sorted(missing)[0]}")
    start = time.perf_counter()

    def run(pid):
        with threadpool_limits(limits=1):
            return fit_person(model, rig, landmarks, [fr.persons[pid] for fr in frames], config, pid)

    if threads > 1 and len(ids) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, ids))
    else:
        results = [run(pid) for pid in ids]
    return FitResult({r.person: r for r in results}, time.perf_counter() - start)
