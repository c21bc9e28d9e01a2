"""Stage 1: a canonical point cloud plus a time-conditioned deformation net,
trained so its splatted projections match the video frames."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import nn
from .geometry import horn_align, project_points_ad, AlignmentError
from .raster import SplatConfig, guidance_image, splat_points
from .perceptual import RobustParams, image_distance, robust_rho
from .scene_io import load_image, read_array, resize_area, write_array

log = logging.getLogger(__name__)

GUIDANCE_MAGIC = b"L3SG"
GUIDANCE_VERSION = 1


@dataclass
class GuidanceConfig:
    point_count: int = 10000
    w_frame: float = 0.1
    w_temporal: float = 0.05
    w_rigid: float = 1e-4
    iterations: int = 2000
    reset_at: float = 0.5
    lr_pcd: float = 1e-3
    lr_mlp: float = 5e-4
    resolution_scale: float = 0.25
    rigid_subsample: int = 512
    seed: int = 0
    # network profile: the full-scale net is 8x256 with a skip at 4; the
    # desk profile used in tests is shallower
    mlp_depth: int = 8
    mlp_hidden: int = 256
    mlp_skip: int = 4

    def __post_init__(self):
        if not 0.0 < self.reset_at < 1.0:
            raise ValueError("reset_at must lie strictly between 0 and 1")
        for w in (self.w_frame, self.w_temporal, self.w_rigid):
            if w < 0:
                raise ValueError("loss weights must be >= 0")


def desk_profile(**overrides):
    """Small configuration for tests and desk-scale runs."""
    cfg = GuidanceConfig(point_count=2000, iterations=400,
                         mlp_depth=4, mlp_hidden=64, mlp_skip=2)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


@dataclass
class TimeSample:
    """A time step and a distinct neighboring step within one frame interval."""
    t: float
    t_prev: float
    dt: float

    @staticmethod
    def draw(t, dt, rng):
        """Sample t' in [t-dt, t); at the sequence start sample forward instead."""
        lo = t - dt
        if lo < 0.0:
            other = t + rng.uniform(0.0, dt)
            other = min(other, 1.0)
        else:
            other = t - rng.uniform(0.0, dt)
        if other == t:  # degenerate draw, nudge by half an interval
            other = min(t + 0.5 * dt, 1.0) if t < 0.5 else max(t - 0.5 * dt, 0.0)
        return TimeSample(t, other, dt)


@dataclass
class GuidanceModel:
    """Canonical points displaced by an MLP conditioned on position and time."""
    canonical_points: np.ndarray  # (N, 3)
    deform_net: nn.Mlp
    encoder: nn.EncoderConfig = field(default_factory=nn.EncoderConfig)

    def encode_inputs(self, points, t):
        enc_p = nn.positional_encode(points, self.encoder.l_spatial)
        n = ad.value_of(points).shape[0]
        enc_t = nn.positional_encode(np.array([t]), self.encoder.l_temporal)
        enc_t = np.broadcast_to(enc_t, (n, enc_t.shape[-1]))
        return ad.concatenate([enc_p, enc_t], axis=-1)


def make_model(points, encoder=None, seed=0, depth=8, hidden=256, skip=4):
    encoder = encoder or nn.EncoderConfig()
    in_dim = 6 * encoder.l_spatial + 2 * encoder.l_temporal
    net = nn.mlp_init(in_dim, 3, hidden=hidden, depth=depth, skip_at=skip,
                      seed=seed, zero_final=True)
    return GuidanceModel(np.asarray(points, dtype=np.float64), net, encoder)


def deform_points(model, t, tape=None, points=None, net_params=None):
    """Canonical points plus the net's displacement at time t."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    pts = points if points is not None else model.canonical_points
    inp = model.encode_inputs(pts, t)
    delta = nn.mlp_forward(model.deform_net, inp, tape=tape, params=net_params)
    return pts + delta


def displacement(model, t, tape=None, points=None, net_params=None):
    """Only the displacement field at time t."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    pts = points if points is not None else model.canonical_points
    inp = model.encode_inputs(pts, t)
    return nn.mlp_forward(model.deform_net, inp, tape=tape, params=net_params)


def render_guidance(model, camera, t, splat_cfg=None, tape=None,
                    points=None, net_params=None):
    """Deform, project and splat; returns the black-on-white guidance image."""
    deformed = deform_points(model, t, tape=tape, points=points,
                             net_params=net_params)
    vals = ad.value_of(deformed)
    cam = camera.world_to_camera(vals)
    visible = cam[:, 2] > 1e-6
    if not np.any(visible):
        img = np.ones((camera.height, camera.width))
        return ad.Var(img, tape=tape) if tape is not None else img
    if not np.all(visible):
        idx = np.nonzero(visible)[0]
        deformed = deformed[idx]
    xy, depth = project_points_ad(camera, deformed)
    j = splat_points(xy, depth, camera.width, camera.height,
                     splat_cfg or SplatConfig(), tape=tape)
    return guidance_image(j)


def guidance_frame_loss(model, target_image, camera, backend, tape=None,
                        t=0.0, splat_cfg=None, points=None, net_params=None,
                        robust=None):
    """Robust perceptual distance between the target frame and the render."""
    render = render_guidance(model, camera, t, splat_cfg, tape=tape,
                             points=points, net_params=net_params)
    d = image_distance(backend, target_image, render, tape=tape)
    return robust_rho(d, robust or RobustParams())


def guidance_temporal_loss(model, sample, tape=None, points=None, net_params=None):
    """Mean per-point norm of the finite-difference displacement velocity."""
    if sample.t == sample.t_prev:
        raise ValueError("temporal loss needs two distinct time steps")
    d_t = displacement(model, sample.t, tape=tape, points=points,
                       net_params=net_params)
    d_p = displacement(model, sample.t_prev, tape=tape, points=points,
                       net_params=net_params)
    vel = (d_t - d_p) / (sample.t - sample.t_prev)
    return ad.mean(ad.norm(vel, axis=1))


def rigid_loss(model, sample, subsample=512, seed=0, tape=None,
               points=None, net_params=None):
    """L1 deviation of the t -> t' rigid alignment from the identity.

    The rotation/translation come from the closed-form alignment on the
    detached clouds; gradients reach the clouds through the differentiable
    translation residual (rotation held fixed), so the loss value is exact
    while the backward pass stays simple.
    """
    p_t = deform_points(model, sample.t, tape=tape, points=points,
                        net_params=net_params)
    p_p = deform_points(model, sample.t_prev, tape=tape, points=points,
                        net_params=net_params)
    n = ad.value_of(p_t).shape[0]
    if subsample and subsample < n:
        idx = np.sort(np.random.default_rng(seed).choice(n, subsample, replace=False))
        p_t = p_t[idx]
        p_p = p_p[idx]
    try:
        align = horn_align(ad.value_of(p_t), ad.value_of(p_p))
    except AlignmentError:
        log.warning("rigid loss skipped: degenerate subsample")
        return ad.Var(np.zeros(()), tape=tape) if tape is not None else 0.0
    q = align.rotation
    rot_term = float(np.sum(np.abs(q - np.array([1.0, 0.0, 0.0, 0.0]))))
    # differentiable translation residual with the recovered rotation fixed
    rot = align.matrix()
    t_diff = ad.mean(p_p, axis=0) - ad.matmul(
        ad.mean(p_t, axis=0).reshape((1, 3)), rot.T).reshape((3,))
    return rot_term + ad.reduce_sum(ad.absolute(t_diff))


def total_guidance_loss(model, target_image, camera, backend, sample, cfg,
                        tape=None, points=None, net_params=None, seed=0):
    lf = guidance_frame_loss(model, target_image, camera, backend, tape=tape,
                             t=sample.t, points=points, net_params=net_params)
    lt = guidance_temporal_loss(model, sample, tape=tape, points=points,
                                net_params=net_params)
    lr = rigid_loss(model, sample, cfg.rigid_subsample, seed=seed, tape=tape,
                    points=points, net_params=net_params)
    return cfg.w_frame * lf + cfg.w_temporal * lt + cfg.w_rigid * lr


def estimate_scene_box(manifest):
    """Axis-aligned box around the least-squares intersection of optical axes.

    Falls back to the unit cube centered at the origin when the axes are
    degenerate (e.g. all parallel).
    """
    if manifest.scene_box is not None:
        return np.asarray(manifest.scene_box, dtype=np.float64)
    a = np.zeros((3, 3))
    b = np.zeros(3)
    origins, dirs = [], []
    for f in manifest.frames:
        w2c = f.camera.extrinsic
        r = w2c[:3, :3]
        origin = -r.T @ w2c[:3, 3]
        d = r.T @ np.array([0.0, 0.0, 1.0])
        origins.append(origin)
        dirs.append(d)
        m = np.eye(3) - np.outer(d, d)
        a += m
        b += m @ origin
    if np.linalg.matrix_rank(a, tol=1e-9) < 3:
        return np.array([[-0.5, -0.5, -0.5], [0.5, 0.5, 0.5]])
    center = np.linalg.solve(a, b)
    radii = []
    for f, origin in zip(manifest.frames, origins):
        depth = np.linalg.norm(center - origin)
        half_fov = np.arctan(0.5 * f.camera.height / f.camera.fy)
        radii.append(depth * np.tan(half_fov))
    r = float(np.median(radii))
    if not np.isfinite(r) or r <= 0:
        return np.array([[-0.5, -0.5, -0.5], [0.5, 0.5, 0.5]])
    return np.array([center - r, center + r])


def _load_targets(manifest, scale):
    targets = []
    for f in manifest.frames:
        img = load_image(f.image_path)
        w = max(1, int(round(f.camera.width * scale)))
        h = max(1, int(round(f.camera.height * scale)))
        if (img.shape[1], img.shape[0]) != (w, h):
            img = resize_area(img, w, h)
        targets.append((img, f.camera.scaled(scale), f.t))
    return targets


def train_guidance(manifest, cfg, backend, callback=None):
    """Fit the guidance model on one scene.

    Seeds a uniform canonical cloud in the estimated scene box, then runs
    Adam on one sampled frame per step.  Halfway through (cfg.reset_at) the
    deformation at t=0 is baked into the canonical cloud and the net is
    re-initialized, so later training embeds motion relative to the first
    frame.
    """
    rng = np.random.default_rng(cfg.seed)
    box = estimate_scene_box(manifest)
    pts = rng.uniform(box[0], box[1], size=(cfg.point_count, 3))
    model = make_model(pts, seed=cfg.seed, depth=cfg.mlp_depth,
                       hidden=cfg.mlp_hidden, skip=cfg.mlp_skip)
    if cfg.iterations == 0:
        return model
    targets = _load_targets(manifest, cfg.resolution_scale)
    dt = manifest.frame_interval()
    adam_pts = nn.AdamState(lr=cfg.lr_pcd)
    adam_net = nn.AdamState(lr=cfg.lr_mlp)
    reset_iter = int(np.floor(cfg.reset_at * cfg.iterations))
    for it in range(cfg.iterations):
        if it == reset_iter:
            model.canonical_points = np.asarray(
                ad.value_of(deform_points(model, 0.0)))
            model.deform_net = nn.mlp_init(
                model.deform_net.in_dim, 3, hidden=cfg.mlp_hidden,
                depth=cfg.mlp_depth, skip_at=cfg.mlp_skip,
                seed=cfg.seed + 1, zero_final=True)
            adam_net = nn.AdamState(lr=cfg.lr_mlp)
            log.info("iteration %d: baked t=0 cloud and reset the deformation net", it)
        img, cam, t = targets[int(rng.integers(len(targets)))]
        sample = TimeSample.draw(t, dt, rng)
        tape = ad.GradTape()
        pts_var = ad.Var(model.canonical_points, tape=tape)
        net_vars = nn.wrap_params(model.deform_net, tape)
        loss = total_guidance_loss(model, img, cam, backend, sample, cfg,
                                   tape=tape, points=pts_var,
                                   net_params=net_vars,
                                   seed=int(rng.integers(2 ** 31)))
        lval = float(ad.value_of(loss))
        if not np.isfinite(lval):
            raise FloatingPointError(f"non-finite loss at iteration {it}")
        tape.backward(loss)
        nn.adam_step([model.canonical_points], [pts_var.grad], adam_pts)
        nn.adam_step(model.deform_net.parameters(),
                     [v.grad for v in net_vars], adam_net)
        # projection step: points pushed out of the scene box (where no camera
        # gradient can recover them) are clamped back inside
        np.clip(model.canonical_points, box[0], box[1],
                out=model.canonical_points)
        if callback is not None:
            callback(it, lval, model)
        if it % 50 == 0:
            log.info("guidance iteration %d: loss %.6f", it, lval)
    return model


# -- checkpointing ("L3SG") ----------------------------------------------------

def save_guidance(model, path):
    with open(path, "wb") as fh:
        fh.write(GUIDANCE_MAGIC)
        fh.write(struct.pack("<I", GUIDANCE_VERSION))
        fh.write(struct.pack("<II", model.encoder.l_spatial, model.encoder.l_temporal))
        write_array(fh, model.canonical_points)
        _write_mlp(fh, model.deform_net)


def load_guidance(path):
    with open(path, "rb") as fh:
        if fh.read(4) != GUIDANCE_MAGIC:
            raise ValueError(f"{path}: not a guidance checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != GUIDANCE_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        ls, lt = struct.unpack("<II", fh.read(8))
        pts = read_array(fh)
        net = _read_mlp(fh)
    return GuidanceModel(pts, net, nn.EncoderConfig(ls, lt))


def _write_mlp(fh, net):
    fh.write(struct.pack("<III", len(net.weights),
                         0xFFFFFFFF if net.skip_at is None else net.skip_at,
                         net.in_dim))
    for w, b in zip(net.weights, net.biases):
        write_array(fh, w)
        write_array(fh, b)


def _read_mlp(fh):
    n, skip, in_dim = struct.unpack("<III", fh.read(12))
    skip_at = None if skip == 0xFFFFFFFF else skip
    weights, biases = [], []
    for _ in range(n):
        weights.append(read_array(fh))
        biases.append(read_array(fh))
    return nn.Mlp(weights, biases, skip_at, in_dim)
