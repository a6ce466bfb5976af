import numpy as np
import pytest
from oracles import raycast_depth, raycast_vertex_visibility

from markerless.body_model import BodyParams, lbs_forward
from markerless.camera import Camera, look_at
from markerless.render import (
    DepthMap,
    SilhouetteMask,
    rasterize,
    read_depth,
    read_pgm,
    silhouette_iou,
    vertex_visibility,
    write_depth,
    write_pgm,
)


def cam64(**kw):
    args = dict(fx=64.0, fy=64.0, cx=32.0, cy=32.0, rotation=np.eye(3), translation=np.zeros(3), width=64,
                height=64)
    args.update(kw)
    return Camera(**args)


def quad(z, half=5.0):
    v = np.array([[-half, -half, z], [half, -half, z], [half, half, z], [-half, half, z]])
    return v, np.array([[0, 1, 2], [0, 2, 3]])


def test_fronto_parallel_quad_fills_view():
    v, f = quad(2.0)
    depth, mask = rasterize(v, f, cam64())
    assert mask.bits.all()
    assert np.allclose(depth.depth, 2.0, atol=1e-12)


def test_z_buffer_keeps_nearest():
    v1, f1 = quad(1.0, 0.1)
    v2, f2 = quad(2.0, 0.5)
    depth, _ = rasterize(np.vstack([v2, v1]), np.vstack([f2, f1 + 4]), cam64())
    c = depth.depth[32, 32]
    assert c == pytest.approx(1.0)
    # outside the near quad but inside the far one
    assert depth.depth[32, 20] == pytest.approx(2.0)


def test_mask_is_finite_depth():
    v, f = quad(3.0, 0.5)
    depth, mask = rasterize(v, f, cam64())
    assert np.array_equal(mask.bits, np.isfinite(depth.depth))
    assert 0 < mask.bits.sum() < 64 * 64


def test_no_backface_culling():
    v, f = quad(2.0)
    d1, _ = rasterize(v, f, cam64())
    d2, _ = rasterize(v, f[:, ::-1], cam64())
    assert np.array_equal(np.isfinite(d1.depth), np.isfinite(d2.depth))
    assert np.allclose(d1.depth, d2.depth, rtol=1e-14)


def test_faces_behind_camera_are_skipped():
    v, f = quad(-2.0)
    depth, mask = rasterize(v, f, cam64())
    assert not mask.bits.any()
    v2 = np.array([[0, 0, 1.0], [1, 0, -1.0], [0, 1, 1.0]])
    _, mask = rasterize(v2, [[0, 1, 2]], cam64())
    assert not mask.bits.any()


def test_zero_resolution_rejected():
    v, f = quad(2.0)
    with pytest.raises(ValueError):
        rasterize(v, f, cam64(), (0, 10))


def test_resolution_rescales_intrinsics():
    v, f = quad(2.0, 0.25)
    _, m1 = rasterize(v, f, cam64())
    _, m2 = rasterize(v, f, cam64(), (128, 128))
    assert m2.bits.shape == (128, 128)
    assert m2.bits.sum() == pytest.approx(4 * m1.bits.sum(), rel=0.1)


def edge_distance(cam, verts, faces):
    """Distance from every pixel center to the nearest projected triangle edge."""
    uv = np.column_stack([cam.fx * verts[:, 0] / verts[:, 2] + cam.cx, cam.fy * verts[:, 1] / verts[:, 2] + cam.cy])
    py, px = np.mgrid[0:cam.height, 0:cam.width]
    c = np.column_stack([px.ravel() + 0.5, py.ravel() + 0.5])
    best = np.full(len(c), np.inf)
    for tri in faces:
        for i in range(3):
            a, b = uv[tri[i]], uv[tri[(i + 1) % 3]]
            ab = b - a
            s = np.clip(((c - a) @ ab) / (ab @ ab), 0, 1)
            best = np.minimum(best, np.linalg.norm(c - (a + s[:, None] * ab), axis=1))
    return best.reshape(cam.height, cam.width)


def test_random_mesh_matches_raycast():
    rng = np.random.default_rng(3)
    cam = cam64()
    verts = np.column_stack([rng.uniform(-0.6, 0.6, 30), rng.uniform(-0.6, 0.6, 30), rng.uniform(1.5, 3.0, 30)])
    faces = np.array([rng.choice(30, 3, replace=False) for _ in range(25)])
    depth, _ = rasterize(verts, faces, cam)
    oracle = raycast_depth(verts, faces, cam)
    clear = edge_distance(cam, verts, faces) > 0.5
    assert clear.sum() > 1000
    assert np.array_equal(np.isfinite(depth.depth[clear]), np.isfinite(oracle[clear]))
    both = clear & np.isfinite(oracle)
    assert both.sum() > 100
    assert np.abs(depth.depth[both] - oracle[both]).max() < 1e-6


def test_posed_toy_depth_matches_raycast(toy):
    R, t = look_at([0.3, 1.2, 3.0], [0, 0.9, 0])
    cam = Camera(80, 80, 32, 32, R, t, 64, 64)
    body = lbs_forward(toy, BodyParams(np.zeros(4), np.zeros((10, 3)), [0, 1, 0]))
    depth, _ = rasterize(body.vertices, toy.faces, cam)
    oracle = raycast_depth(body.vertices, toy.faces, cam)
    both = np.isfinite(depth.depth) & np.isfinite(oracle)
    assert both.sum() > 50
    assert np.abs(depth.depth[both] - oracle[both]).max() < 1e-6


def test_vertex_visibility_simple_cases():
    cam = cam64()
    v, f = quad(2.0, 0.5)
    depth, _ = rasterize(v, f, cam)
    assert vertex_visibility(v, cam, depth).all() or vertex_visibility(v * [0.99, 0.99, 1], cam, depth).all()
    small = np.array([[-0.05, -0.05, 3.0], [0.05, -0.05, 3.0], [0.0, 0.05, 3.0]])
    allv = np.vstack([v, small])
    depth, _ = rasterize(allv, np.vstack([f, [[4, 5, 6]]]), cam)
    assert not vertex_visibility(small, cam, depth).any()


def test_vertex_visibility_off_image():
    cam = cam64()
    depth = DepthMap(64, 64, np.full((64, 64), np.inf))
    pts = np.array([[0, 0, 1.0], [10, 0, 1.0], [0, 0, -1.0]])
    assert vertex_visibility(pts, cam, depth).tolist() == [True, False, False]


def test_visibility_monotone_in_eps(toy):
    R, t = look_at([2.0, 1.5, 2.0], [0, 1, 0])
    cam = Camera(100, 100, 32, 32, R, t, 64, 64)
    body = lbs_forward(toy, BodyParams(np.zeros(4), np.zeros((10, 3)), [0, 1, 0]))
    depth, _ = rasterize(body.vertices, toy.faces, cam)
    prev = vertex_visibility(body.vertices, cam, depth, 0.0)
    for eps in (1e-3, 5e-3, 2e-2, 0.1):
        cur = vertex_visibility(body.vertices, cam, depth, eps)
        assert np.all(cur >= prev)
        prev = cur


def test_two_body_visibility_matches_raycast(toy):
    from markerless.camera import ring_rig

    rig = ring_rig(4, 3.0, 1.7, (0, 1, 0), image_size=(256, 188), focal=250)
    a = lbs_forward(toy, BodyParams(np.zeros(4), np.zeros((10, 3)), [0, 1, 0]))
    b = lbs_forward(toy, BodyParams([0, 0, 2, 0], np.zeros((10, 3)), [0.3, 1.0, 0.2]))
    verts = np.vstack([a.vertices, b.vertices])
    faces = np.vstack([toy.faces, toy.faces + toy.num_vertices])
    for cam in rig:
        depth, _ = rasterize(verts, faces, cam)
        vis = vertex_visibility(verts, cam, depth, 0.005)
        ref, margin = raycast_vertex_visibility(verts, faces, cam, 0.005)
        sure = margin > 0.01
        assert np.array_equal(vis[sure], ref[sure])


def test_iou_cases():
    a = np.zeros((10, 10), bool)
    a[2:6, 2:6] = True
    m = SilhouetteMask(10, 10, a)
    assert silhouette_iou(m, m) == 1.0
    b = np.zeros((10, 10), bool)
    b[7:9, 7:9] = True
    assert silhouette_iou(m, SilhouetteMask(10, 10, b)) == 0.0
    r1 = np.zeros((10, 10), bool)
    r1[0:4, 0:4] = True
    r2 = np.zeros((10, 10), bool)
    r2[0:4, 2:6] = True
    x, y = SilhouetteMask(10, 10, r1), SilhouetteMask(10, 10, r2)
    assert silhouette_iou(x, y) == pytest.approx(1 / 3, abs=0) and silhouette_iou(y, x) == silhouette_iou(x, y)
    empty = SilhouetteMask(10, 10, np.zeros((10, 10), bool))
    assert silhouette_iou(empty, empty) == 1.0
    with pytest.raises(ValueError):
        silhouette_iou(m, SilhouetteMask(5, 5, np.zeros((5, 5), bool)))


def test_pgm_and_depth_round_trip(tmp_path):
    v, f = quad(2.5, 0.4)
    depth, mask = rasterize(v, f, cam64())
    write_pgm(mask, tmp_path / "m.pgm")
    assert (tmp_path / "m.pgm").read_bytes().startswith(b"P5\n64 64\n255\n")
    assert np.array_equal(read_pgm(tmp_path / "m.pgm").bits, mask.bits)
    write_depth(depth, tmp_path / "d.dpth")
    raw = (tmp_path / "d.dpth").read_bytes()
    assert raw[:4] == b"DPTH" and len(raw) == 16 + 4 * 64 * 64
    back = read_depth(tmp_path / "d.dpth")
    assert np.array_equal(back.depth, depth.depth.astype(np.float32))
