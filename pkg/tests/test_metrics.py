import numpy as np
import pytest

from markerless.body_model import BodyParams, MarkerSpec, lbs_forward, rodrigues
from markerless.camera import ring_rig
from markerless.metrics import (
    MetricsReport,
    evaluate,
    heldout_marker_error,
    mpjpe,
    posed_arrays,
    pve,
    sequence_miou,
)
from markerless.motion import procedural_motion


@pytest.fixture(scope="module")
def seq(toy):
    return procedural_motion(toy, 4, seed=2)


def shifted(seq, offset):
    out = []
    for p in seq:
        q = p.copy()
        q.translation = q.translation + offset
        out.append(q)
    return out


def test_identical_sequences_score_zero(toy, seq):
    rep = evaluate(toy, [seq], [seq])
    assert rep.mpjpe == 0.0 and rep.pve == 0.0
    assert all(v == 0.0 for part in rep.per_part.values() for v in part.values())


def test_uniform_offset_is_reported_exactly(toy, seq):
    rep = evaluate(toy, [seq], [shifted(seq, [0.0, 0.0, 0.005])])
    assert rep.pve == pytest.approx(0.005, abs=1e-12)
    assert rep.mpjpe == pytest.approx(0.005, abs=1e-12)
    d = rep.to_dict()
    assert d["pve_mm"] == pytest.approx(5.0, abs=1e-9)
    off = np.array([1.0, 2.0, 2.0]) * 1e-3  # 3 mm
    assert evaluate(toy, [seq], [shifted(seq, off)]).mpjpe == pytest.approx(0.003, abs=1e-12)


def test_matches_direct_recompute(toy, seq, rng):
    pred = []
    for p in seq:
        q = p.copy()
        q.pose = q.pose + rng.normal(0, 0.05, q.pose.shape)
        pred.append(q)
    rep = evaluate(toy, [seq], [pred])
    v_err, j_err = [], []
    for a, b in zip(seq, pred):
        ba, bb = lbs_forward(toy, a), lbs_forward(toy, b)
        v_err.extend(np.linalg.norm(ba.vertices - bb.vertices, axis=1))
        j_err.extend(np.linalg.norm(ba.joints - bb.joints, axis=1))
    assert rep.pve == pytest.approx(np.mean(v_err), abs=1e-12)
    assert rep.mpjpe == pytest.approx(np.mean(j_err), abs=1e-12)
    assert np.mean(rep.per_frame["pve"]) == pytest.approx(rep.pve, abs=1e-12)


def test_part_errors_are_a_weighted_split(toy, seq, rng):
    pred = [BodyParams(p.betas, p.pose + rng.normal(0, 0.05, p.pose.shape), p.translation) for p in seq]
    rep = evaluate(toy, [seq], [pred])
    counts = np.bincount(toy.part_labels, minlength=len(toy.part_names))
    total = sum(rep.per_part[n]["pve_m"] * counts[i] for i, n in enumerate(toy.part_names))
    assert total / counts.sum() == pytest.approx(rep.pve, rel=1e-12)
    gv, _ = posed_arrays(toy, [seq])
    pv, _ = posed_arrays(toy, [pred])
    mask = toy.part_labels == toy.part_names.index("left_hand")
    assert rep.per_part["left_hand"]["pve_m"] == pytest.approx(pve(gv, pv, mask), abs=1e-15)


def test_metric_argument_checks():
    with pytest.raises(ValueError, match="shape"):
        mpjpe(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        pve(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros(2, bool))


def test_heldout_markers(toy, seq, rng):
    gv, _ = posed_arrays(toy, [seq])
    gv = gv[:, 0]
    specs = [MarkerSpec(int(v), tuple(rng.normal(0, 0.01, 3))) for v in rng.choice(toy.num_vertices, 6)]
    assert heldout_marker_error(gv, gv, toy.faces, specs) == 0.0
    off = np.array([0.0, 0.01, 0.0])
    assert heldout_marker_error(gv, gv + off, toy.faces, specs) == pytest.approx(0.01, abs=1e-12)
    # a common rigid motion of both sequences leaves the error unchanged
    pv = gv + rng.normal(0, 0.002, gv.shape)
    R = rodrigues(rng.normal(size=3))
    t = rng.normal(size=3)
    before = heldout_marker_error(gv, pv, toy.faces, specs)
    after = heldout_marker_error(gv @ R.T + t, pv @ R.T + t, toy.faces, specs)
    assert after == pytest.approx(before, abs=1e-9)


def test_miou(toy, seq):
    rig = ring_rig(3, 3.0, 1.7, (0, 1, 0), image_size=(160, 120), focal=150)
    gv, _ = posed_arrays(toy, [seq])
    same, per_frame = sequence_miou(gv, gv, toy.faces, rig)
    assert same == 1.0 and np.all(per_frame == 1.0)
    away = gv + np.array([50.0, 0.0, 0.0])
    assert sequence_miou(gv, away, toy.faces, rig)[0] == 0.0
    moved = gv + np.array([0.05, 0.0, 0.0])
    ab = sequence_miou(gv, moved, toy.faces, rig)[0]
    ba = sequence_miou(moved, gv, toy.faces, rig)[0]
    assert ab == ba and 0.0 < ab < 1.0


def test_report_serialization(toy, seq):
    rig = ring_rig(2, 3.0, 1.7, (0, 1, 0), image_size=(96, 64), focal=90)
    specs = [MarkerSpec(3, (0.0, 0.0, 0.01))]
    rep = evaluate(toy, [seq], [shifted(seq, [0.002, 0, 0])], markers=specs, rig=rig)
    d = rep.to_dict()
    assert set(d) == {"mpjpe_mm", "pve_mm", "per_part", "heldout_marker_mm", "miou"}
    assert d["heldout_marker_mm"] == pytest.approx(2.0, abs=1e-9)
    assert set(d["per_part"]["head"]) == {"pve_mm", "mpjpe_mm"}
    frames = rep.frame_records()
    assert [f["frame"] for f in frames] == [0, 1, 2, 3]
    assert frames[0]["pve_mm"] == pytest.approx(2.0, abs=1e-9)
    assert "miou" in frames[0]
    assert MetricsReport(0.001, 0.002).to_dict()["miou"] is None
