import numpy as np
import pytest

from motionsketch import evalkit as ek
from motionsketch import scene_io
from motionsketch.geometry import bezier_polyline, horn_align, project


def test_chamfer_single_points():
    assert ek.chamfer([[0, 0, 0]], [[1, 0, 0]]) == 1.0


def test_chamfer_hand_fixture():
    a = [[0, 0, 0], [2, 0, 0]]
    b = [[1, 0, 0]]
    assert abs(ek.chamfer(a, b) - 1.0) < 1e-12


def test_chamfer_identity_zero():
    pts = np.random.default_rng(0).normal(size=(50, 3))
    assert ek.chamfer(pts, pts) == 0.0


def test_chamfer_matches_brute_force():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(30, 3))
    b = rng.normal(size=(40, 3))
    d = np.linalg.norm(a[:, None] - b[None], axis=2)
    brute = 0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean())
    assert abs(ek.chamfer(a, b) - brute) < 1e-12


def test_chamfer_symmetric_and_empty():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(10, 3))
    b = rng.normal(size=(12, 3))
    assert abs(ek.chamfer(a, b) - ek.chamfer(b, a)) < 1e-12
    with pytest.raises(ValueError):
        ek.chamfer(np.zeros((0, 3)), b)


def test_velocity_invariant_to_static_offset():
    # a statically offset copy of a moving cloud has identical velocities
    rng = np.random.default_rng(3)
    base = rng.normal(size=(20, 3))
    v = np.array([0.3, -0.1, 0.2])
    times = [0.0, 0.5, 1.0]
    clouds = [base + v * t for t in times]
    gt = ek.PointCloudSequence(times, clouds)
    pred = ek.PointCloudSequence(times, [c + np.array([5.0, 0, 0]) for c in clouds])
    assert ek.motion_velocity_distance(pred, gt) < 1e-12


def test_velocity_uniform_motion_against_static():
    rng = np.random.default_rng(4)
    base = rng.normal(size=(15, 3))
    times = [0.0, 0.5, 1.0]
    gt = ek.PointCloudSequence(times, [base.copy() for _ in times])
    s = 0.25
    pred = ek.PointCloudSequence(
        times, [base + np.array([s * k, 0, 0]) for k in range(3)])
    assert abs(ek.motion_velocity_distance(pred, gt) - s) < 1e-12


def test_velocity_validation():
    seq = ek.PointCloudSequence([0.0, 1.0], [np.zeros((3, 3))] * 2)
    other = ek.PointCloudSequence([0.0, 0.7], [np.zeros((3, 3))] * 2)
    with pytest.raises(ValueError):
        ek.motion_velocity_distance(seq, other)
    with pytest.raises(ValueError):
        ek.PointCloudSequence([0.5, 0.5], [np.zeros((3, 3))] * 2)


def test_synth_spec_validation():
    with pytest.raises(ValueError):
        ek.SynthSceneSpec("wobble")
    with pytest.raises(ValueError):
        ek.SynthSceneSpec("static", stroke_count=0)


def test_rigid_rotor_motion_is_rigid():
    spec = ek.SynthSceneSpec("rigid_rotor", stroke_count=4, frame_count=5,
                             view_count=1, image_size=32, seed=7)
    rng = np.random.default_rng(spec.seed)
    base = ek._base_strokes(spec, rng)
    axis = rng.normal(size=3) + np.array([0.0, 0.0, 1.0])
    c0 = np.concatenate([bezier_polyline(cp, 31) for cp in
                         ek._strokes_at(base, 0.0, spec, axis)])
    c1 = np.concatenate([bezier_polyline(cp, 31) for cp in
                         ek._strokes_at(base, 0.7, spec, axis)])
    align = horn_align(c0, c1)
    assert align.rms_residual < 1e-9


def test_static_preset_never_moves():
    spec = ek.SynthSceneSpec("static", stroke_count=3, frame_count=4,
                             view_count=1, image_size=32, seed=5)
    rng = np.random.default_rng(spec.seed)
    base = ek._base_strokes(spec, rng)
    for t in (0.0, 0.5, 1.0):
        assert np.array_equal(ek._strokes_at(base, t, spec, np.ones(3)), base)


def test_bender_endpoints_fixed():
    spec = ek.SynthSceneSpec("bender", stroke_count=3, frame_count=4,
                             view_count=1, image_size=32, seed=6)
    rng = np.random.default_rng(spec.seed)
    base = ek._base_strokes(spec, rng)
    moved = ek._strokes_at(base, 0.3, spec, np.ones(3))
    assert np.array_equal(moved[:, 0], base[:, 0])
    assert np.array_equal(moved[:, 3], base[:, 3])
    assert not np.array_equal(moved[:, 1], base[:, 1])


def test_hemisphere_cameras_look_at_origin():
    cams = ek.hemisphere_cameras(8, 64)
    for cam in cams:
        z = cam.world_to_camera(np.zeros(3))[0, 2]
        assert abs(z - 2.5) < 1e-9  # origin sits on the optical axis at radius
        xy, _ = project(cam, np.zeros(3))
        assert np.allclose(xy, [32.0, 32.0], atol=1e-6)


def test_generate_scene_files_and_determinism(tmp_path):
    spec = ek.SynthSceneSpec("static", stroke_count=2, frame_count=3,
                             view_count=2, image_size=32, seed=9)
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    m1, s1, c1 = ek.generate_synthetic_scene(spec, out1)
    m2, s2, c2 = ek.generate_synthetic_scene(spec, out2)
    assert len(m1.frames) == 6
    assert sorted(p.name for p in out1.glob("*.png")) == \
        sorted(p.name for p in out2.glob("*.png"))
    for a, b in zip(s1, s2):
        assert np.array_equal(a, b)
    assert (out1 / "manifest.json").exists()
    assert (out1 / "gt_animation.json").exists()
    assert len(list(out1.glob("gt_points_*.ply"))) == 3
    # manifest loads back
    back = scene_io.load_manifest(out1 / "manifest.json")
    assert len(back.frames) == 6


def test_gt_point_clouds_shape():
    frames = [np.random.default_rng(0).normal(size=(4, 4, 3)) for _ in range(2)]
    seq = ek.gt_point_clouds(frames, [0.0, 1.0])
    assert seq.clouds[0].shape == (4 * ek.GT_SAMPLES_PER_STROKE, 3)
