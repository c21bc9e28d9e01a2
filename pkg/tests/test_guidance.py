import numpy as np
import pytest

from motionsketch import autodiff as ad
from motionsketch import guidance as gd
from motionsketch import nn, scene_io
from motionsketch.evalkit import SynthSceneSpec, generate_synthetic_scene
from motionsketch.geometry import Camera, quat_to_matrix
from motionsketch.perceptual import ImageDistanceBackend


def _tiny_model(n=12, seed=0):
    pts = np.random.default_rng(seed).uniform(-0.3, 0.3, size=(n, 3))
    return gd.make_model(pts, seed=seed, depth=2, hidden=16, skip=1)


def test_deform_identity_at_init():
    # zeroed final layer: the net starts as the identity deformation
    model = _tiny_model()
    out = gd.deform_points(model, 0.37)
    assert np.allclose(out, model.canonical_points)


def test_deform_rejects_bad_time():
    model = _tiny_model()
    with pytest.raises(ValueError):
        gd.deform_points(model, 1.2)


def test_displacement_hand_net():
    # one-layer net with hand-set weights on a single point
    model = _tiny_model(n=1)
    in_dim = model.deform_net.in_dim
    w = np.zeros((in_dim, 3))
    w[0, 0] = 2.0  # reads sin(pi * x) of the first coordinate
    net = nn.Mlp([w], [np.array([0.1, 0.0, 0.0])], None, in_dim)
    model.deform_net = net
    model.canonical_points = np.array([[0.25, 0.0, 0.0]])
    disp = gd.displacement(model, 0.0)
    expect_x = 2.0 * np.sin(np.pi * 0.25) + 0.1
    assert np.allclose(disp, [[expect_x, 0.0, 0.0]], atol=1e-12)


def test_temporal_loss_linear_field():
    # Delta(t) = v * t gives exactly ||v|| for any pair of times
    model = _tiny_model(n=5)
    v = np.array([0.3, -0.4, 1.2])

    def fake_displacement(m, t, tape=None, points=None, net_params=None):
        n = m.canonical_points.shape[0]
        return np.tile(v * t, (n, 1))

    orig = gd.displacement
    gd.displacement = fake_displacement
    try:
        s = gd.TimeSample(0.8, 0.15, 0.1)
        loss = gd.guidance_temporal_loss(model, s)
        assert abs(float(loss) - np.linalg.norm(v)) < 1e-12
    finally:
        gd.displacement = orig


def test_temporal_loss_needs_distinct_times():
    model = _tiny_model()
    with pytest.raises(ValueError):
        gd.guidance_temporal_loss(model, gd.TimeSample(0.5, 0.5, 0.1))


def _fixed_cloud_model(cloud_t, cloud_p):
    """A model whose deform_points returns preset clouds at two times."""
    model = _tiny_model(n=cloud_t.shape[0])

    def fake(m, t, tape=None, points=None, net_params=None):
        base = cloud_t if t >= 0.5 else cloud_p
        if tape is not None:
            return ad.Var(base, tape=tape)
        return base
    return model, fake


def test_rigid_loss_pure_translation():
    rng = np.random.default_rng(0)
    cloud = rng.normal(size=(20, 3))
    model, fake = _fixed_cloud_model(cloud + np.array([1.0, 0.0, 0.0]), cloud)
    orig = gd.deform_points
    gd.deform_points = fake
    try:
        loss = gd.rigid_loss(model, gd.TimeSample(0.9, 0.1, 0.1), subsample=0)
        assert abs(float(ad.value_of(loss)) - 1.0) < 1e-6
    finally:
        gd.deform_points = orig


def test_rigid_loss_90_degree_rotation():
    rng = np.random.default_rng(1)
    cloud = rng.normal(size=(20, 3))
    rot = quat_to_matrix(np.array([np.sqrt(0.5), 0, 0, np.sqrt(0.5)]))
    model, fake = _fixed_cloud_model(cloud, cloud @ rot.T)
    orig = gd.deform_points
    gd.deform_points = fake
    try:
        loss = gd.rigid_loss(model, gd.TimeSample(0.9, 0.1, 0.1), subsample=0)
        # |sqrt(.5) - 1| + sqrt(.5) = 1
        assert abs(float(ad.value_of(loss)) - 1.0) < 1e-6
    finally:
        gd.deform_points = orig


def test_time_sample_draw_in_range():
    rng = np.random.default_rng(2)
    for t in (0.0, 0.35, 1.0):
        for _ in range(50):
            s = gd.TimeSample.draw(t, 0.1, rng)
            assert s.t == t and s.t_prev != t
            assert 0.0 <= s.t_prev <= 1.0
            assert abs(s.t_prev - t) <= 0.1 + 1e-12


def test_estimate_scene_box_from_manifest_box():
    box = np.array([[-1.0, -2.0, -3.0], [1.0, 2.0, 3.0]])
    m = scene_io.SceneManifest([], box)
    assert np.allclose(gd.estimate_scene_box(m), box)


def test_estimate_scene_box_degenerate_falls_back():
    cam = Camera(np.eye(4), 10, 10, 5, 5, 10, 10)
    frames = [scene_io.FrameRecord("x", 0.0, cam)] * 3  # parallel axes
    box = gd.estimate_scene_box(scene_io.SceneManifest(frames))
    assert np.allclose(box, [[-0.5, -0.5, -0.5], [0.5, 0.5, 0.5]])


def test_render_guidance_all_behind_is_white():
    model = _tiny_model()
    ext = np.eye(4)
    ext[2, 3] = -10.0  # cloud far behind the camera
    cam = Camera(ext, 10, 10, 4, 4, 8, 8)
    img = gd.render_guidance(model, cam, 0.0)
    assert np.array_equal(np.asarray(img), np.ones((8, 8)))


def test_guidance_config_validation():
    with pytest.raises(ValueError):
        gd.GuidanceConfig(reset_at=0.0)
    with pytest.raises(ValueError):
        gd.GuidanceConfig(w_frame=-1.0)


@pytest.fixture(scope="module")
def tiny_scene(tmp_path_factory):
    out = tmp_path_factory.mktemp("scene")
    spec = SynthSceneSpec("static", stroke_count=2, frame_count=3,
                          view_count=2, image_size=32, seed=1)
    manifest, _, _ = generate_synthetic_scene(spec, out)
    return manifest


def test_train_guidance_deterministic(tiny_scene):
    cfg = gd.desk_profile(point_count=60, iterations=8, mlp_depth=2,
                          mlp_hidden=16, mlp_skip=1, seed=4)
    backend = ImageDistanceBackend("pyramid_gradient")
    m1 = gd.train_guidance(tiny_scene, cfg, backend)
    m2 = gd.train_guidance(tiny_scene, cfg, backend)
    assert np.array_equal(m1.canonical_points, m2.canonical_points)
    for a, b in zip(m1.deform_net.parameters(), m2.deform_net.parameters()):
        assert np.array_equal(a, b)


def test_train_guidance_reset_reinitializes(tiny_scene):
    cfg = gd.desk_profile(point_count=40, iterations=4, reset_at=0.5,
                          mlp_depth=2, mlp_hidden=16, mlp_skip=1, seed=5)
    backend = ImageDistanceBackend("pixel_robust")
    seen = []
    gd.train_guidance(tiny_scene, cfg, backend,
                      callback=lambda it, l, m: seen.append(it))
    assert seen == [0, 1, 2, 3]


def test_guidance_checkpoint_round_trip(tmp_path):
    model = _tiny_model(n=9, seed=3)
    path = tmp_path / "g.l3sg"
    gd.save_guidance(model, path)
    back = gd.load_guidance(path)
    assert np.array_equal(back.canonical_points, model.canonical_points)
    assert back.deform_net.skip_at == model.deform_net.skip_at
    for a, b in zip(back.deform_net.parameters(), model.deform_net.parameters()):
        assert np.array_equal(a, b)
    out_a = gd.deform_points(model, 0.5)
    out_b = gd.deform_points(back, 0.5)
    assert np.allclose(out_a, out_b)


def test_guidance_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "bad.l3sg"
    p.write_bytes(b"XXXX" + b"\x00" * 32)
    with pytest.raises(ValueError):
        gd.load_guidance(p)
