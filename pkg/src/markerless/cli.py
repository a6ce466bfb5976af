"""Command-line entry point: ``markerless {landmarks,synth,fit,eval}``.

Exit codes: 0 success, 2 input error, 3 consistency error, 4 numerical failure.
Outputs are byte-deterministic for fixed inputs and seeds; wall-clock time is
only ever printed to stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .body_model import (ModelError, landmarks_from_dict, landmarks_to_dict, load_model,
                         part_counts, sample_landmarks, validate_landmarks)
from .camera import CalibrationError, load_rig, ring_rig, rig_to_dict
from .fit import ConfigError, FitConfig, FitDivergenceError, InitializationError, fit_sequence, load_fit_config
from .formats import (ConsistencyError, FormatError, landmark_hash, markers_from_dict, motion_from_sequences,
                      read_json, read_motion, read_observations, topology_hash, write_json, write_jsonl,
                      write_motion, write_observations)
from .metrics import evaluate
from .motion import procedural_motion
from .observe import generate_observations
from .render import rasterize, write_depth, write_pgm
from .scene import FileSource, LandmarkSource, ProceduralSource, SceneConfig, SceneError, scene_from_dict

log = logging.getLogger("markerless")

EXIT_OK, EXIT_INPUT, EXIT_CONSISTENCY, EXIT_NUMERIC = 0, 2, 3, 4


class InputError(Exception):
    pass


def _model(path):
    try:
        return load_model(path)
    except FileNotFoundError:
        raise InputError(f"cannot read model {path}") from None
    except (ModelError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _landmarks(path, model):
    d = read_json(path, "landmark file")
    try:
        lm = landmarks_from_dict(d)
        validate_landmarks(model, lm)
    except (ModelError, KeyError, TypeError) as exc:
        raise InputError(f"{path}: {exc}") from None
    th = d.get("topology_hash")
    if th is not None and th != topology_hash(model):
        raise ConsistencyError(f"{path}: topology hash {th} does not match model {topology_hash(model)}")
    return lm


def _rig(path):
    try:
        return load_rig(path)
    except FileNotFoundError:
        raise InputError(f"cannot read calibration {path}") from None
    except OSError as exc:
        raise InputError(f"cannot read calibration {path}: {exc.strerror}") from None


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# landmarks
# --------------------------------------------------------------------------


def cmd_landmarks(args) -> int:
    cfg = read_json(args.config, "config") if args.config else {}
    model = _model(args.model or cfg.get("model", "builtin:toy"))
    n = args.n if args.n is not None else int(cfg.get("n", 512))
    seed_index = args.seed_index if args.seed_index is not None else cfg.get("seed_index")
    if seed_index is None:
        seed_index = args.seed % model.num_vertices if args.seed is not None else 0
    if n > model.num_vertices:
        raise InputError(f"n = {n} exceeds the model's {model.num_vertices} vertices")
    lm = sample_landmarks(model, n, int(seed_index), cfg.get("weights"))
    out = _out_dir(args)
    write_json(out / "landmarks.json", landmarks_to_dict(lm, topology_hash(model)))
    if not args.quiet:
        for part, count in part_counts(model, lm.indices).items():
            print(f"{part}: {count}")
    return EXIT_OK


# --------------------------------------------------------------------------
# synth
# --------------------------------------------------------------------------


def _person_motion(model, src, k: int, scene: SceneConfig):
    if isinstance(src, ProceduralSource):
        mot = procedural_motion(model, scene.frames, scene.fps, frequency=src.frequency, amplitude=src.amplitude,
                                seed=src.seed, translation=src.translation, yaw=src.yaw,
                                betas_std=src.betas_std, drift=src.drift)
        if src.betas is not None:
            if len(src.betas) != model.num_betas:
                raise SceneError(f"persons[{k}].procedural.betas: need {model.num_betas} values")
            for p in mot:
                p.betas = np.asarray(src.betas, dtype=np.float64)
        return mot
    assert isinstance(src, FileSource)
    motion = read_motion(src.path)
    if motion.topology_hash != topology_hash(model):
        raise ConsistencyError(f"{src.path}: motion topology does not match the model")
    pid = src.person or motion.person_ids[0]
    if pid not in motion.person_ids:
        raise SceneError(f"persons[{k}].file.person: {pid!r} not in {src.path}")
    seq = motion.sequence(pid)
    if len(seq) < scene.frames:
        raise SceneError(f"persons[{k}].file: {src.path} has {len(seq)} frames, need {scene.frames}")
    return [p.copy() for p in seq[: scene.frames]]


def cmd_synth(args) -> int:
    if not args.config:
        scene = SceneConfig()
    else:
        path = Path(args.config)
        scene = scene_from_dict(read_json(path, "scene config"), path.parent)
    noise = scene.noise
    if args.seed is not None:
        noise = replace(noise, rng_seed=int(args.seed))
    model = _model(scene.model)
    th = topology_hash(model)
    if isinstance(scene.rig, Path):
        rig = _rig(scene.rig)
    else:
        r = scene.rig
        rig = ring_rig(r.n, r.radius, r.height, r.target, image_size=r.image_size, focal=r.focal)
    src: LandmarkSource = scene.landmarks
    if src.path is not None:
        lm = _landmarks(src.path, model)
    else:
        if src.n > model.num_vertices:
            raise SceneError(f"landmarks.fps.n: {src.n} exceeds the model's {model.num_vertices} vertices")
        lm = sample_landmarks(model, src.n, src.seed_index, src.weights)
    motions = [_person_motion(model, s, k, scene) for k, s in enumerate(scene.persons)]
    ids = [f"p{k}" for k in range(len(motions))]
    frames, truth = generate_observations(model, motions, rig, lm, noise, person_ids=ids, fps=scene.fps,
                                          occlusion=scene.occlusion, visibility_eps=scene.visibility_eps)
    out = _out_dir(args)
    write_json(out / "calibration.json", rig_to_dict(rig))
    write_json(out / "landmarks.json", landmarks_to_dict(lm, th))
    write_motion(out / "motion_gt.jsonl", motion_from_sequences(model, dict(zip(ids, motions)), scene.fps))
    write_observations(out / "observations.jsonl", frames, rig_name=rig.name, camera_names=rig.names,
                       landmarks=lm, fps=scene.fps, topology=th)
    if scene.dumps.masks or scene.dumps.depth:
        _dump_renders(out, model, truth, rig, scene)
    if not args.quiet:
        vis = truth.visible.mean()
        print(f"{len(frames)} frames, {len(ids)} persons, {len(rig)} cameras, {len(lm)} landmarks, "
              f"visible fraction {vis:.4f}")
    return EXIT_OK


def _dump_renders(out: Path, model, truth, rig, scene: SceneConfig):
    d = out / "renders"
    d.mkdir(exist_ok=True)
    P, V = truth.vertices.shape[1], model.num_vertices
    faces = np.concatenate([model.faces + k * V for k in range(P)])
    for f in range(truth.vertices.shape[0]):
        verts = truth.vertices[f].reshape(-1, 3)
        for name, cam in zip(rig.names, rig.cameras):
            depth, mask = rasterize(verts, faces, cam, scene.dumps.resolution)
            if scene.dumps.masks:
                write_pgm(mask, d / f"mask_{f:05d}_{name}.pgm")
            if scene.dumps.depth:
                write_depth(depth, d / f"depth_{f:05d}_{name}.dpth")


# --------------------------------------------------------------------------
# fit
# --------------------------------------------------------------------------


def cmd_fit(args) -> int:
    model = _model(args.model)
    th = topology_hash(model)
    rig = _rig(args.calibration)
    lm = _landmarks(args.landmarks, model)
    obs = read_observations(args.observations)
    try:
        config = load_fit_config(args.config) if args.config else FitConfig()
    except OSError as exc:
        raise InputError(f"cannot read fit config {args.config}: {exc.strerror}") from None
    if obs.landmark_hash != landmark_hash(lm):
        raise ConsistencyError(f"{args.observations}: landmark hash {obs.landmark_hash} does not match "
                               f"{args.landmarks} ({landmark_hash(lm)})")
    if obs.topology_hash is not None and obs.topology_hash != th:
        raise ConsistencyError(f"{args.observations}: topology hash does not match the model")
    if tuple(obs.camera_names) != tuple(rig.names):
        raise ConsistencyError(f"{args.observations}: cameras {list(obs.camera_names)} do not match "
                               f"calibration {list(rig.names)}")
    if not obs.frames:
        raise InputError(f"{args.observations}: no frames")
    threads = args.threads or os.cpu_count() or 1
    start = time.perf_counter()
    result = fit_sequence(model, rig, lm, obs.frames, config, threads=threads)
    ids = obs.frames[0].person_ids
    out = _out_dir(args)
    write_motion(out / "motion_fit.jsonl",
                 motion_from_sequences(model, {pid: result.params(pid) for pid in ids}, obs.fps))
    write_motion(out / "motion_init.jsonl",
                 motion_from_sequences(model, {pid: result.persons[pid].init_params for pid in ids}, obs.fps))
    write_jsonl(out / "trace.jsonl", (rec for pid in ids for rec in result.persons[pid].trace))

    def energy_records():
        for pid in ids:
            pf = result.persons[pid]
            for f, e in enumerate(pf.energies):
                yield {"person": pid, "frame": f, **e.to_dict()}
            for entry in pf.log:
                yield {"person": pid, "frame": entry.frame, "stage": entry.stage, "iterations": entry.iterations,
                       "status": entry.status, "gradient_norm": entry.gradient_norm, "objective": entry.objective}

    write_jsonl(out / "energies.jsonl", energy_records())
    if not args.quiet:
        for pid in ids:
            last = result.persons[pid].energies[-1]
            print(f"{pid}: final-frame energy {last.total:.6g}")
    print(f"fit wall time {time.perf_counter() - start:.2f} s", file=sys.stderr)
    return EXIT_OK


# --------------------------------------------------------------------------
# eval
# --------------------------------------------------------------------------


def cmd_eval(args) -> int:
    model = _model(args.model)
    th = topology_hash(model)
    gt = read_motion(args.gt)
    pred = read_motion(args.pred)
    for path, m in ((args.gt, gt), (args.pred, pred)):
        if m.topology_hash != th:
            raise ConsistencyError(f"{path}: topology hash {m.topology_hash} does not match model {th}")
    if gt.person_ids != pred.person_ids or len(gt.frames) != len(pred.frames):
        raise ConsistencyError("ground truth and prediction differ in persons or frame count")
    markers = None
    if args.markers:
        markers, mth = markers_from_dict(read_json(args.markers, "marker file"), args.markers)
        if mth is not None and mth != th:
            raise ConsistencyError(f"{args.markers}: topology hash does not match the model")
        for s in markers:
            if not 0 <= s.vertex < model.num_vertices:
                raise InputError(f"{args.markers}: marker vertex {s.vertex} out of range")
    rig = None
    if args.miou:
        if not args.calibration:
            raise InputError("--miou needs --calibration")
        rig = _rig(args.calibration)
    resolution = tuple(args.resolution) if args.resolution else None
    if resolution is not None and min(resolution) <= 0:
        raise InputError("--resolution must be positive")
    report = evaluate(model, [gt.sequence(p) for p in gt.person_ids], [pred.sequence(p) for p in pred.person_ids],
                      markers=markers, rig=rig, resolution=resolution)
    out = _out_dir(args)
    write_json(out / "metrics.json", report.to_dict())
    write_jsonl(out / "metrics_frames.jsonl", report.frame_records())
    if not args.quiet:
        d = report.to_dict()
        print(f"MPJPE {d['mpjpe_mm']:.3f} mm  PVE {d['pve_mm']:.3f} mm")
        if d["heldout_marker_mm"] is not None:
            print(f"held-out markers {d['heldout_marker_mm']:.3f} mm")
        if d["miou"] is not None:
            print(f"mIoU {d['miou']:.4f}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config for the command")
    common.add_argument("--seed", type=int, help="overrides the config's random seed")
    common.add_argument("--threads", type=int, default=None, help="worker cap (default: all cores)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="markerless", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("landmarks", parents=[common], help="sample a landmark set by weighted FPS")
    p.add_argument("--model", default=None, help="model JSON or builtin:toy")
    p.add_argument("--n", type=int, default=None, help="number of landmarks (default 512)")
    p.add_argument("--seed-index", type=int, default=None)
    p.set_defaults(func=cmd_landmarks)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic multi-view scene")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", parents=[common], help="fit bodies to landmark observations")
    p.add_argument("--model", default="builtin:toy")
    p.add_argument("--calibration", required=True)
    p.add_argument("--observations", required=True)
    p.add_argument("--landmarks", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", parents=[common], help="compare fitted motion against ground truth")
    p.add_argument("--model", default="builtin:toy")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--markers", help="held-out marker file")
    p.add_argument("--miou", action="store_true", help="also compute silhouette mIoU")
    p.add_argument("--calibration", help="camera rig for --miou")
    p.add_argument("--resolution", type=int, nargs=2, metavar=("W", "H"))
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except (InputError, FormatError, CalibrationError, ConfigError, SceneError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConsistencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONSISTENCY
    except FitDivergenceError as exc:
        print(f"error: {exc}; last parameters {np.array2string(exc.x, precision=4)}", file=sys.stderr)
        return EXIT_NUMERIC
    except InitializationError as exc:
        print(f"error: initialization failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
