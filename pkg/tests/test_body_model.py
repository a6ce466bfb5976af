import math

import numpy as np
import pytest
from oracles import brute_force_fps
from hypothesis import given, settings
from hypothesis import strategies as st

from markerless.body_model import (
    BodyModel,
    BodyParams,
    LandmarkSet,
    MarkerSpec,
    ModelError,
    fps_sample,
    incident_frame,
    landmarks_from_dict,
    landmarks_to_dict,
    lbs_forward,
    load_model,
    marker_from_point,
    model_from_dict,
    model_to_dict,
    part_counts,
    regress_marker,
    rodrigues,
    rodrigues_jacobian,
    rotation_log,
    sample_landmarks,
    save_model,
    shape_blend,
    skew,
)

finite = st.floats(-3.0, 3.0, allow_nan=False)
vec3 = st.tuples(finite, finite, finite)


def expm_series(A, terms=30):
    """Matrix exponential by a truncated power series with scaling and squaring."""
    s = max(0, int(np.ceil(np.log2(max(np.abs(A).max(), 1e-300)))) + 4)
    B = A / 2.0 ** s
    out = np.eye(3)
    term = np.eye(3)
    for k in range(1, terms):
        term = term @ B / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


def random_rotation(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    return q * np.sign(np.linalg.det(q))


# rotations


def test_rodrigues_zero_is_identity():
    assert np.array_equal(rodrigues([0, 0, 0]), np.eye(3))


def test_rodrigues_quarter_turn_about_z():
    R = rodrigues([0, 0, math.pi / 2])
    assert np.allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-15)


def test_rodrigues_matches_matrix_exponential(rng):
    for _ in range(50):
        v = rng.normal(size=3) * rng.uniform(0, 3)
        assert np.abs(rodrigues(v) - expm_series(skew(v))).max() < 1e-12


@given(vec3)
def test_rodrigues_is_proper_rotation(v):
    R = rodrigues(v)
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-12
    assert abs(np.linalg.det(R) - 1.0) < 1e-12


def test_rodrigues_continuous_near_zero():
    for eps in (1e-3, 1e-2 - 1e-12, 1e-2, 1e-2 + 1e-12, 1e-6):
        v = np.array([eps, -0.5 * eps, 0.3 * eps])
        assert np.abs(rodrigues(v) - expm_series(skew(v))).max() < 1e-15


def test_rodrigues_jacobian_matches_finite_differences(rng):
    for scale in (1e-4, 5e-3, 0.5, 2.5):
        v = rng.normal(size=3) * scale
        _, dR = rodrigues_jacobian(v)
        h = 1e-6
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fd = (rodrigues(v + e) - rodrigues(v - e)) / (2 * h)
            assert np.abs(fd - dR[i]).max() < 1e-8


@given(vec3)
def test_rotation_log_inverts_rodrigues(v):
    v = np.asarray(v)
    theta = np.linalg.norm(v)
    if theta > math.pi - 1e-3:
        v = v / theta * (math.pi - 1e-3)
    assert np.allclose(rodrigues(rotation_log(rodrigues(v))), rodrigues(v), atol=1e-10)


def test_rotation_log_at_pi():
    axis = np.array([1.0, 2.0, -2.0]) / 3.0
    w = rotation_log(rodrigues(math.pi * axis))
    assert np.isclose(np.linalg.norm(w), math.pi)
    assert np.allclose(rodrigues(w), rodrigues(math.pi * axis), atol=1e-12)


# model invariants


def test_toy_body_invariants(toy):
    assert toy.num_joints == 10
    assert 500 <= toy.num_vertices <= 700
    assert toy.num_betas == 4
    assert toy.parents[0] == -1 and all(toy.parents[j] < j for j in range(1, 10))
    assert np.allclose(toy.skinning_weights.sum(1), 1.0, atol=1e-12)
    assert np.allclose(toy.joint_regressor.sum(1), 1.0, atol=1e-12)
    assert set(toy.part_names) == {"body", "left_hand", "right_hand", "head"}


def _tiny_model(**over):
    d = dict(name="tiny", parents=[-1, 0], template_vertices=np.eye(3), faces=[[0, 1, 2]],
             joint_regressor=[[1, 0, 0], [0, 1, 0]], skinning_weights=[[1, 0], [0, 1], [0.5, 0.5]],
             shape_dirs=np.zeros((1, 3, 3)))
    d.update(over)
    return BodyModel(**d)


@pytest.mark.parametrize("over,msg", [
    (dict(parents=[0, 0]), "parents"),
    (dict(parents=[-1, 1]), "parents"),
    (dict(faces=[[0, 1, 3]]), "face index"),
    (dict(faces=[[0, 1, 1]]), "degenerate"),
    (dict(skinning_weights=[[1, 0], [0, 1], [0.5, 0.6]]), "sum to 1"),
    (dict(joint_regressor=[[1.5, -0.5, 0], [0, 1, 0]]), "negative"),
    (dict(shape_dirs=np.zeros((1, 2, 3))), "shape_dirs"),
])
def test_model_validation(over, msg):
    with pytest.raises(ModelError, match=msg):
        _tiny_model(**over)


def test_model_arrays_are_read_only(toy):
    with pytest.raises(ValueError):
        toy.template_vertices[0, 0] = 1.0


# shape blending and skinning


def test_shape_blend_zero_is_template(toy):
    v, j = shape_blend(toy, np.zeros(4))
    assert np.array_equal(v, toy.template_vertices)
    assert np.array_equal(j, toy.joint_regressor @ toy.template_vertices)


def test_shape_blend_one_hot_and_linearity(toy):
    e0, e1 = np.eye(4)[0], np.eye(4)[1]
    v0, _ = shape_blend(toy, e0)
    v1, _ = shape_blend(toy, e1)
    assert np.allclose(v0, toy.template_vertices + toy.shape_dirs[0], atol=1e-15)
    vm, _ = shape_blend(toy, 0.5 * e0 + 0.5 * e1)
    expected = toy.template_vertices + 0.5 * (v0 - toy.template_vertices) + 0.5 * (v1 - toy.template_vertices)
    assert np.allclose(vm, expected, atol=1e-14)


def test_shape_blend_dimension_mismatch(toy):
    with pytest.raises(ModelError):
        shape_blend(toy, np.zeros(3))


def test_rest_pose_identity(toy, rng):
    for _ in range(5):
        betas = rng.normal(size=4)
        body = lbs_forward(toy, BodyParams(betas, np.zeros((10, 3)), np.zeros(3)))
        v, j = shape_blend(toy, betas)
        assert np.abs(body.vertices - v).max() < 1e-14
        assert np.abs(body.joints - j).max() < 1e-14


def test_translation_equivariance(toy):
    body = lbs_forward(toy, BodyParams(np.zeros(4), np.zeros((10, 3)), [1, 2, 3]))
    assert np.allclose(body.vertices, toy.template_vertices + [1, 2, 3], atol=1e-14)


def test_rigid_equivariance(toy, rng):
    for _ in range(5):
        pose = rng.normal(0, 0.4, (10, 3))
        betas = rng.normal(size=4)
        t = rng.normal(size=3)
        base = lbs_forward(toy, BodyParams(betas, pose, t))
        R = random_rotation(rng)
        u = rng.normal(size=3)
        # a world rotation about the root's rest joint: compose with root and move t
        _, rest = shape_blend(toy, betas)
        r0 = rest[0]
        pose2 = pose.copy()
        pose2[0] = rotation_log(R @ rodrigues(pose[0]))
        t2 = R @ (t + r0) + u - r0
        moved = lbs_forward(toy, BodyParams(betas, pose2, t2))
        assert np.abs(moved.vertices - (base.vertices @ R.T + u)).max() < 1e-9
        assert np.abs(moved.joints - (base.joints @ R.T + u)).max() < 1e-9


def test_weight_one_vertices_move_rigidly(toy):
    j = toy.joint_names.index("left_elbow")
    pose = np.zeros((10, 3))
    pose[j] = (0.0, 0.0, math.pi / 2)
    body = lbs_forward(toy, BodyParams(np.zeros(4), pose, np.zeros(3)))
    _, rest = shape_blend(toy, np.zeros(4))
    R = rodrigues(pose[j])
    rigid = np.nonzero(toy.skinning_weights[:, j] == 1.0)[0]
    assert rigid.size > 10
    expected = (toy.template_vertices[rigid] - rest[j]) @ R.T + rest[j]
    assert np.abs(body.vertices[rigid] - expected).max() < 1e-14


def test_skinning_is_weighted_blend_of_joint_transforms(toy, rng):
    from markerless.body_model import global_transforms

    pose = rng.normal(0, 0.5, (10, 3))
    betas = rng.normal(size=4)
    body = lbs_forward(toy, BodyParams(betas, pose, np.zeros(3)))
    shaped, rest = shape_blend(toy, betas)
    Rg, tg = global_transforms(toy.parents, rest, [rodrigues(p) for p in pose])
    for v in rng.choice(toy.num_vertices, 30, replace=False):
        cand = [Rg[k] @ (shaped[v] - rest[k]) + tg[k] for k in range(10)]
        blend = sum(toy.skinning_weights[v, k] * cand[k] for k in range(10))
        assert np.abs(blend - body.vertices[v]).max() < 1e-12


def test_pack_unpack_round_trip(toy, rng):
    p = BodyParams(rng.normal(size=4), rng.normal(size=(10, 3)), rng.normal(size=3))
    x = p.pack()
    assert x.shape == (37,)
    assert np.array_equal(x[:3], p.translation) and np.array_equal(x[3:6], p.pose[0])
    q = BodyParams.unpack(x, 10, 4)
    assert np.array_equal(q.pose, p.pose) and np.array_equal(q.betas, p.betas)


def test_params_reject_nan():
    with pytest.raises(ModelError):
        BodyParams([0.0], [[np.nan, 0, 0]], [0, 0, 0])


# farthest point sampling


def test_fps_all_points_uniform():
    pts = np.random.default_rng(1).normal(size=(12, 3))
    lm = fps_sample(pts, np.ones(12), 12, 0)
    assert sorted(lm.indices.tolist()) == list(range(12))
    assert lm.indices.tolist() == brute_force_fps(pts, np.ones(12), 12, 0)


def test_fps_square_diagonal():
    pts = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float)
    assert fps_sample(pts, np.ones(4), 2, 0).indices.tolist() == [0, 2]


def test_fps_weighted_cluster_matches_brute_force():
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(16, 3))
    w = np.ones(16)
    w[:4] = 10.0
    pts[:4] = rng.normal(0, 0.05, (4, 3))
    assert fps_sample(pts, w, 10, 5).indices.tolist() == brute_force_fps(pts, w, 10, 5)


def test_fps_ties_go_to_lowest_index():
    pts = np.array([[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 1, 0]], float)
    assert fps_sample(pts, np.ones(4), 2, 0).indices.tolist() == [0, 1]


@pytest.mark.parametrize("kwargs,msg", [
    (dict(n=5), "cannot sample"),
    (dict(weights=np.zeros(4)), "zero"),
    (dict(weights=-np.ones(4)), "nonnegative"),
    (dict(seed_index=4), "seed_index"),
])
def test_fps_errors(kwargs, msg):
    args = dict(points=np.eye(4)[:, :3], weights=np.ones(4), n=2, seed_index=0)
    args.update(kwargs)
    with pytest.raises(ValueError, match=msg):
        fps_sample(**args)


def test_sample_landmarks_512_on_toy(toy):
    lm = sample_landmarks(toy, 512)
    assert len(lm) == 512 and np.unique(lm.indices).size == 512
    counts = part_counts(toy, lm.indices)
    assert sum(counts.values()) == 512
    # hands are weighted up, so their share exceeds their share of vertices
    hand_share = (counts["left_hand"] + counts["right_hand"]) / 512
    hand_verts = (toy.part_mask("left_hand").sum() + toy.part_mask("right_hand").sum()) / toy.num_vertices
    assert hand_share >= hand_verts


def test_sample_landmarks_all_vertices(toy):
    assert len(sample_landmarks(toy, toy.num_vertices)) == toy.num_vertices


def test_landmark_indices_distinct():
    with pytest.raises(ModelError):
        LandmarkSet([1, 2, 2])


# markers


def test_incident_frame_axis_aligned():
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float)
    origin, axes = incident_frame(verts, np.array([[0, 1, 2]]), 0)
    assert np.array_equal(origin, [0, 0, 0])
    assert np.allclose(axes, np.eye(3), atol=1e-15)


def test_incident_frame_orthonormal_and_right_handed(toy, rng):
    body = lbs_forward(toy, BodyParams(rng.normal(size=4), rng.normal(0, 0.4, (10, 3)), np.zeros(3)))
    for v in rng.choice(toy.num_vertices, 40, replace=False):
        _, A = incident_frame(body.vertices, toy.faces, int(v))
        assert np.abs(A.T @ A - np.eye(3)).max() < 1e-10
        assert np.linalg.det(A) > 0


def test_incident_frame_rotates_with_mesh(toy, rng):
    R = random_rotation(rng)
    _, A = incident_frame(toy.template_vertices, toy.faces, 17)
    o2, A2 = incident_frame(toy.template_vertices @ R.T, toy.faces, 17)
    assert np.allclose(A2, R @ A, atol=1e-12)
    assert np.allclose(o2, R @ toy.template_vertices[17], atol=1e-12)


def test_incident_frame_errors():
    verts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [5, 5, 5]], float)
    with pytest.raises(ModelError, match="no incident"):
        incident_frame(verts, np.array([[0, 1, 2]]), 3)
    with pytest.raises(ModelError, match="degenerate"):
        incident_frame(verts, np.array([[0, 1, 2]]), 0)


def test_marker_zero_displacement_is_vertex(toy):
    assert np.array_equal(regress_marker(toy.template_vertices, toy.faces, MarkerSpec(40)),
                          toy.template_vertices[40])


@given(st.integers(0, 615), vec3)
@settings(max_examples=50, deadline=None)
def test_marker_round_trip(vertex, q):
    from markerless.toy import stick_body

    toy = stick_body()
    q = toy.template_vertices[vertex] + 0.02 * np.asarray(q)
    spec = marker_from_point(toy.template_vertices, toy.faces, vertex, q)
    assert np.abs(regress_marker(toy.template_vertices, toy.faces, spec) - q).max() < 1e-9


# serialization


def test_model_round_trip(toy, tmp_path):
    path = tmp_path / "m.json"
    save_model(toy, path)
    m = load_model(path)
    assert m.name == toy.name and m.joint_names == toy.joint_names
    for key in ("parents", "template_vertices", "faces", "joint_regressor", "skinning_weights", "shape_dirs",
                "part_labels"):
        assert np.array_equal(getattr(m, key), getattr(toy, key))
    save_model(m, tmp_path / "m2.json")
    assert path.read_bytes() == (tmp_path / "m2.json").read_bytes()


def test_model_dict_errors(toy):
    d = model_to_dict(toy)
    del d["faces"]
    with pytest.raises(ModelError, match="faces"):
        model_from_dict(d)
    with pytest.raises(ModelError, match="format_version"):
        model_from_dict({**model_to_dict(toy), "format_version": 2})


def test_builtin_toy_loads():
    assert load_model("builtin:toy").num_joints == 10


def test_landmark_dict_round_trip(toy):
    lm = sample_landmarks(toy, 32)
    back = landmarks_from_dict(landmarks_to_dict(lm, "abc"))
    assert np.array_equal(back.indices, lm.indices)
    assert np.array_equal(back.sampling_weights, lm.sampling_weights)
