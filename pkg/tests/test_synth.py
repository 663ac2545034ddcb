import math

import numpy as np
import pytest

from handforge import ParamVector, hpsl_forward
from handforge.fileio import read_obj, read_params_csv, read_pgm
from handforge.synth import (
    CameraIntrinsics,
    SampleConfig,
    backproject,
    default_camera,
    generate_dataset,
    project,
    render_depth,
    render_sample,
    sample,
)

import naive


def test_default_camera_focal_from_diagonal_fov():
    cam = default_camera()
    want = 200.0 / math.tan(math.radians(37.0))
    assert cam.fx == pytest.approx(want, abs=1e-9)
    assert cam.fx == pytest.approx(265.41, abs=5e-3)
    assert (cam.width, cam.height) == (320, 240)
    assert (cam.cx, cam.cy) == (160.0, 120.0)


def test_project_optical_axis():
    cam = default_camera()
    u, v, d = project(np.array([0.0, 0.0, 500.0]), cam)
    assert (u, v, d) == (160.0, 120.0, 500.0)


def test_project_off_image_is_returned():
    cam = default_camera()
    f = cam.fx
    for k in (0.5, 1.0, 3.0):
        u, v, d = project(np.array([f * k, 0.0, f * k]), cam)
        assert u == pytest.approx(160.0 + f, abs=1e-9)
        assert v == 120.0


def test_project_behind_camera_raises():
    cam = default_camera()
    with pytest.raises(ValueError, match="behind camera"):
        project(np.array([0.0, 0.0, -5.0]), cam)


def test_backproject_inverts_project():
    cam = default_camera()
    pts = np.array([[10.0, -30.0, 400.0], [-50.0, 80.0, 777.0]])
    uv, depth = project(pts, cam)
    back = backproject(uv[:, 0], uv[:, 1], depth, cam)
    np.testing.assert_allclose(back, pts, atol=1e-9)


def _tri_frame(tri, cam=None, labels=(1, 1, 1)):
    cam = cam or default_camera()
    verts = np.array(tri, dtype=np.float64)
    faces = np.array([[0, 1, 2]])
    return render_depth(verts, faces, np.array(labels), cam)


def test_flat_triangle_depth():
    frame = _tri_frame([
        [-100.0, -100.0, 400.0],
        [150.0, -80.0, 400.0],
        [0.0, 150.0, 400.0],
    ])
    assert frame.depth[120, 160] == pytest.approx(400.0, abs=1e-9)
    assert frame.labels[120, 160] == 1


def test_zbuffer_keeps_nearest():
    cam = default_camera()
    verts = np.array([
        [-100.0, -100.0, 400.0], [150.0, -80.0, 400.0], [0.0, 150.0, 400.0],
        [-100.0, -100.0, 300.0], [150.0, -80.0, 300.0], [0.0, 150.0, 300.0],
    ])
    faces = np.array([[0, 1, 2], [3, 4, 5]])
    labels = np.array([1, 1, 1, 2, 2, 2])
    frame = render_depth(verts, faces, labels, cam)
    assert frame.depth[120, 160] == pytest.approx(300.0, abs=1e-9)
    assert frame.labels[120, 160] == 2


def test_raster_matches_raycast_oracle():
    cam = default_camera()
    rng = np.random.default_rng(99)
    for _ in range(12):
        tri = np.column_stack([
            rng.uniform(-150, 150, 3),
            rng.uniform(-120, 120, 3),
            rng.uniform(250, 900, 3),
        ])
        frame = _tri_frame(tri, cam)
        oracle = naive.raycast_depth(tri, cam, cam.height, cam.width)
        both = (frame.depth > 0) & np.isfinite(oracle)
        if both.any():
            assert np.max(np.abs(frame.depth[both] - oracle[both])) <= 0.1
        raster_hits = int((frame.depth > 0).sum())
        oracle_hits = int(np.isfinite(oracle).sum())
        overlap = int(both.sum())
        assert raster_hits - overlap <= max(2, 0.02 * max(raster_hits, 1))
        assert oracle_hits - overlap <= max(2, 0.02 * max(oracle_hits, 1))


def test_fully_behind_camera_gives_empty_frame():
    frame = _tri_frame([
        [0.0, 0.0, -400.0], [10.0, 0.0, -400.0], [0.0, 10.0, -400.0],
    ])
    assert not np.any(frame.depth)
    assert not np.any(frame.labels)


def test_sample_deterministic(default_model):
    cfg = SampleConfig(count=10, seed=42)
    a = sample(default_model, cfg, 3)
    b = sample(default_model, cfg, 3)
    np.testing.assert_array_equal(a.to_flat(), b.to_flat())
    c = sample(default_model, cfg, 4)
    assert not np.array_equal(a.to_flat(), c.to_flat())


def test_sample_degenerate_range(default_model):
    cfg = SampleConfig(count=5, seed=1, distance_range=(450.0, 450.0))
    for i in range(5):
        assert sample(default_model, cfg, i).delta_theta[2] == 450.0


def test_sample_uniformity(default_model):
    cfg = SampleConfig(count=10000, seed=7, distance_range=(350.0, 600.0))
    draws = np.array([sample(default_model, cfg, i).delta_theta[2]
                      for i in range(10000)])
    span = 250.0
    assert draws.min() <= 350.0 + 0.01 * span
    assert draws.max() >= 600.0 - 0.01 * span
    assert abs(draws.mean() - 475.0) <= 0.02 * span


def test_sample_respects_bounds(default_model):
    cfg = SampleConfig(count=50, seed=3)
    bounds = default_model.dof_bounds
    for i in range(50):
        theta = default_model.theta_init + sample(default_model, cfg, i).delta_theta
        art = theta[6:]
        assert np.all(art >= bounds[6:, 0] - 1e-12)
        assert np.all(art <= bounds[6:, 1] + 1e-12)


def test_twist_coupling_reserved():
    with pytest.raises(ValueError, match="twist_coupling"):
        SampleConfig(count=1, twist_coupling=(0.5, 0, 0, 0, 0))


def test_config_json_round_trip():
    cfg = SampleConfig(count=17, seed=5, distance_range=(400.0, 500.0))
    again = SampleConfig.from_json(cfg.to_json())
    assert again == cfg
    assert again.digest() == cfg.digest()


def test_label_depth_consistency(default_model):
    cfg = SampleConfig(count=3, seed=11)
    for i in range(3):
        frame = render_sample(default_model, cfg, i, default_camera())
        np.testing.assert_array_equal(frame.labels != 0, frame.depth != 0)


def test_render_translation_consistency_flat_surface():
    """Pushing a fronto-parallel surface 10 mm deeper adds exactly 10 mm
    to every foreground pixel whose visibility is unchanged."""
    cam = default_camera()
    quad = np.array([
        [-80.0, -60.0, 400.0], [90.0, -60.0, 400.0],
        [90.0, 70.0, 400.0], [-80.0, 70.0, 400.0],
    ])
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    labels = np.array([1, 1, 1, 1])
    near_frame = render_depth(quad, faces, labels, cam)
    far_frame = render_depth(quad + np.array([0.0, 0.0, 10.0]), faces, labels, cam)
    both = (near_frame.depth > 0) & (far_frame.depth > 0)
    assert both.sum() > 1000
    diff = far_frame.depth[both] - near_frame.depth[both]
    assert np.max(np.abs(diff - 10.0)) <= 0.1


def test_render_translation_consistency_hand_bulk(default_model):
    """On curved geometry, rays graze different surface points after the
    shift, so only the bulk of stable pixels moves by the translation."""
    cfg = SampleConfig(count=1, seed=23)
    cam = default_camera()
    params = sample(default_model, cfg, 0)
    state = hpsl_forward(default_model, params)
    near_frame = render_depth(state.vertices, default_model.faces,
                              default_model.part_labels, cam)
    far_frame = render_depth(state.vertices + np.array([0.0, 0.0, 10.0]),
                             default_model.faces, default_model.part_labels, cam)
    both = (near_frame.depth > 0) & (far_frame.depth > 0)
    diff = far_frame.depth[both] - near_frame.depth[both]
    assert np.median(np.abs(diff - 10.0)) <= 1.0
    assert np.mean(np.abs(diff - 10.0) <= 2.0) >= 0.9


def test_generate_dataset_round_trip(default_model, tmp_path):
    cfg = SampleConfig(count=3, seed=13)
    out1 = tmp_path / "run1"
    out2 = tmp_path / "run2"
    man1 = generate_dataset(default_model, cfg, out1, jobs=2)
    man2 = generate_dataset(default_model, cfg, out2, jobs=1)
    assert man1["count"] == 3
    names = sorted(p.name for p in out1.iterdir())
    assert names == sorted(p.name for p in out2.iterdir())
    assert len([n for n in names if n.startswith("depth_")]) == 3
    assert len([n for n in names if n.startswith("mesh_")]) == 3
    for name in names:
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name

    # stored parameters and mesh reproduce the forward pass
    for i in range(3):
        cols = read_params_csv(out1 / f"params_{i:06d}.csv")
        params = ParamVector(cols["delta_theta"], cols["alpha"], cols["beta"])
        state = hpsl_forward(default_model, params)
        verts, faces = read_obj(out1 / f"mesh_{i:06d}.obj")
        assert np.max(np.abs(verts - state.vertices)) <= 1e-6
        np.testing.assert_array_equal(faces, default_model.faces)
        np.testing.assert_allclose(cols["joint"], state.joint_positions,
                                   atol=1e-6)
        depth = read_pgm(out1 / f"depth_{i:06d}.pgm")
        labels = read_pgm(out1 / f"label_{i:06d}.pgm")
        np.testing.assert_array_equal(labels != 0, depth != 0)


def count_joints_in_footprint(model, cfg, cam, occlusion_margin=30.0):
    """(visible, inside): a joint is visible when it projects into the
    image and no surface sits clearly in front of it; it lands inside the
    footprint when its pixel is foreground."""
    visible = 0
    inside = 0
    for i in range(cfg.count):
        frame = render_sample(model, cfg, i, cam)
        uv, depth = project(frame.truth.joints, cam)
        for (u, v), d in zip(uv, depth):
            px, py = int(round(u)), int(round(v))
            if not (0 <= px < cam.width and 0 <= py < cam.height):
                continue
            surface = frame.depth[py, px]
            if surface != 0 and d > surface + occlusion_margin:
                continue  # occluded behind another part
            visible += 1
            if surface != 0:
                inside += 1
    return visible, inside


def test_rendered_joints_land_in_footprint(default_model):
    cfg = SampleConfig(count=8, seed=31)
    visible, inside = count_joints_in_footprint(
        default_model, cfg, default_camera())
    assert visible > 0
    assert inside / visible >= 0.95
