"""Stage 2: canonical strokes plus per-stroke rigid transforms and
control-point deltas, trained coarse-to-fine against the video frames."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .geometry import farthest_point_sampling, outlier_filter
from .raster import StrokeRasterConfig, raster_strokes
from .perceptual import RobustParams, cosine_distance, global_embedding, \
    image_distance, robust_rho
from .guidance import TimeSample, deform_points
from .scene_io import load_image, read_array, resize_area, write_array

log = logging.getLogger(__name__)

SKETCH_MAGIC = b"L3SS"
SKETCH_VERSION = 1


@dataclass
class SuppressionParams:
    """Logistic gate that zeroes sub-threshold displacements."""
    a: float = 100.0
    b: float = 0.05

    def __post_init__(self):
        if self.a <= 0 or self.b < 0:
            raise ValueError("need a > 0 and b >= 0")


@dataclass
class SketchConfig:
    stroke_count: int = 16
    base_radius: float = 0.02
    min_spacing: float = 1e-3
    lambda_s: float = 0.01
    lambda_t: float = 0.01
    lambda_r: float = 1e-3
    lambda_l: float = 1e-3
    coarse_iterations: int = 500
    fine_iterations: int = 300
    coarse_scale: float = 0.5
    fine_scale: float = 1.0
    lr_transform: float = 5e-4  # net_R / net_T (synthetic profile)
    lr_other: float = 1e-3      # canonical points and net_L
    seed: int = 0
    filter_k: int = 10
    filter_z: float = 2.0
    mlp_depth: int = 8
    mlp_hidden: int = 256
    mlp_skip: int = 4
    freeze_transform_in_fine: bool = True
    raster: StrokeRasterConfig = field(default_factory=StrokeRasterConfig)
    suppression: SuppressionParams = field(default_factory=SuppressionParams)

    def __post_init__(self):
        if self.stroke_count < 1:
            raise ValueError("need at least one stroke")
        if not self.base_radius > self.min_spacing > 0:
            raise ValueError("need base_radius > min_spacing > 0")
        for w in (self.lambda_s, self.lambda_t, self.lambda_r, self.lambda_l):
            if w < 0:
                raise ValueError("loss weights must be >= 0")


def desk_sketch_profile(**overrides):
    cfg = SketchConfig(stroke_count=8, coarse_iterations=300, fine_iterations=200,
                       mlp_depth=4, mlp_hidden=64, mlp_skip=2)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


@dataclass
class SketchModel:
    """Canonical strokes, fixed anchors, and the three deformation nets."""
    canonical_strokes: np.ndarray  # (n, 4, 3)
    anchors: np.ndarray            # (n, 3)
    net_r: nn.Mlp                  # quaternion increments, output 4
    net_t: nn.Mlp                  # per-stroke translation, output 3
    net_l: nn.Mlp                  # per-control-point delta, output 3
    encoder: nn.EncoderConfig = field(default_factory=nn.EncoderConfig)
    suppression: SuppressionParams = field(default_factory=SuppressionParams)

    @property
    def stroke_count(self):
        return self.canonical_strokes.shape[0]


def suppress(v, params):
    """Scale a displacement by logistic(a (|v| - b)) of its Euclidean norm.

    Direction is preserved and the output is never longer than the input.
    Applied along the last axis.
    """
    n = ad.norm(v, axis=-1, keepdims=True)
    gate = ad.sigmoid(params.a * (n - params.b))
    return v * gate


def init_strokes(guidance_model, cfg):
    """Anchors via FPS on the outlier-filtered t=0 cloud; each stroke grows
    from its anchor by base-radius steps in seeded random directions, with a
    minimum spacing between consecutive control points."""
    cloud = np.asarray(ad.value_of(deform_points(guidance_model, 0.0)))
    cloud = outlier_filter(cloud, cfg.filter_k, cfg.filter_z)
    if cfg.stroke_count > cloud.shape[0]:
        raise ValueError(f"{cfg.stroke_count} strokes exceed the "
                         f"{cloud.shape[0]}-point filtered cloud")
    idx = farthest_point_sampling(cloud, cfg.stroke_count, seed=cfg.seed)
    anchors = cloud[idx]
    rng = np.random.default_rng(cfg.seed)
    strokes = np.empty((cfg.stroke_count, 4, 3))
    for i, anchor in enumerate(anchors):
        strokes[i, 0] = anchor
        prev = anchor
        for j in range(1, 4):
            while True:
                direction = rng.normal(size=3)
                norm = np.linalg.norm(direction)
                if norm < 1e-12:
                    continue
                step = cfg.base_radius + rng.uniform(-0.5, 0.5) * cfg.base_radius
                cand = prev + (step / norm) * direction
                if np.linalg.norm(cand - prev) >= cfg.min_spacing:
                    break
            strokes[i, j] = cand
            prev = cand
    return strokes, anchors


def make_sketch_model(guidance_model, cfg):
    """Initialize strokes from guidance; net_T inherits the guidance weights,
    net_R and net_L start as exact identities (zeroed final layers)."""
    strokes, anchors = init_strokes(guidance_model, cfg)
    encoder = guidance_model.encoder
    in_dim = 6 * encoder.l_spatial + 2 * encoder.l_temporal
    g_net = guidance_model.deform_net
    if g_net.in_dim != in_dim or g_net.out_dim != 3:
        raise ValueError("guidance net architecture incompatible with net_T")
    net_t = g_net.copy()
    net_r = nn.mlp_init(in_dim, 4, hidden=cfg.mlp_hidden, depth=cfg.mlp_depth,
                        skip_at=cfg.mlp_skip, seed=cfg.seed + 10, zero_final=True)
    net_l = nn.mlp_init(in_dim, 3, hidden=cfg.mlp_hidden, depth=cfg.mlp_depth,
                        skip_at=cfg.mlp_skip, seed=cfg.seed + 11, zero_final=True)
    return SketchModel(strokes, anchors, net_r, net_t, net_l,
                       encoder, cfg.suppression)


def _encode(model, points, t):
    enc_p = nn.positional_encode(points, model.encoder.l_spatial)
    n = ad.value_of(points).shape[0]
    enc_t = nn.positional_encode(np.array([t]), model.encoder.l_temporal)
    enc_t = np.broadcast_to(enc_t, (n, enc_t.shape[-1]))
    return ad.concatenate([enc_p, enc_t], axis=-1)


def _quat_heads_to_matrices(raw):
    """(n, 4) quaternion increments -> (n, 3, 3) rotations.

    The increment is added to the identity quaternion and normalized, so a
    zeroed head yields the exact identity rotation.
    """
    q = raw + np.array([1.0, 0.0, 0.0, 0.0])
    q = q / ad.norm(q, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    row0 = ad.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1)
    row1 = ad.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1)
    row2 = ad.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1)
    return ad.stack([row0, row1, row2], axis=1), q


def stroke_transforms(model, t, tape=None, params_r=None, params_t=None):
    """Per-stroke rotation matrices, translations, and unit quaternions at t."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    inp = _encode(model, model.anchors, t)
    raw_q = nn.mlp_forward(model.net_r, inp, tape=tape, params=params_r)
    trans = nn.mlp_forward(model.net_t, inp, tape=tape, params=params_t)
    rot, q = _quat_heads_to_matrices(raw_q)
    return rot, trans, q


def stroke_transform(model, i, t, tape=None):
    """Rotation matrix and translation of a single stroke."""
    rot, trans, _ = stroke_transforms(model, t, tape=tape)
    return ad.value_of(rot)[i] if tape is None else rot[i], \
        ad.value_of(trans)[i] if tape is None else trans[i]


def control_point_delta(model, transformed_points, t, tape=None, params_l=None):
    """Raw (pre-suppression) displacement of transformed control points."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    inp = _encode(model, transformed_points, t)
    return nn.mlp_forward(model.net_l, inp, tape=tape, params=params_l)


def sketch_displacement(model, t, tape=None, strokes=None,
                        params_r=None, params_t=None, params_l=None):
    """Per-control-point suppressed total displacement at time t.

    Returns (suppressed displacement (n,4,3), raw net_L delta (n,4,3),
    quaternions (n,4), translations (n,3)).
    """
    cp = strokes if strokes is not None else model.canonical_strokes
    n = ad.value_of(cp).shape[0]
    rot, trans, q = stroke_transforms(model, t, tape=tape,
                                      params_r=params_r, params_t=params_t)
    # q_pts[i, j] = R_i p_ij + T_i
    cp_t = ad.matmul(rot, _swap_last(cp))  # (n, 3, 4)
    q_pts = _swap_last(cp_t) + trans.reshape((n, 1, 3))
    flat = q_pts.reshape((n * 4, 3))
    delta_l = control_point_delta(model, flat, t, tape=tape, params_l=params_l)
    delta_l = delta_l.reshape((n, 4, 3))
    total = (q_pts - cp) + delta_l
    return suppress(total, model.suppression), delta_l, q, trans


def _swap_last(x):
    if isinstance(x, ad.Var):
        shape = x.value.shape
        perm = list(range(len(shape)))
        perm[-1], perm[-2] = perm[-2], perm[-1]
        return ad._unary(x, lambda a: np.swapaxes(a, -1, -2),
                         lambda g, a, out: np.swapaxes(g, -1, -2))
    return np.swapaxes(x, -1, -2)


def sketch_at(model, t, tape=None, strokes=None,
              params_r=None, params_t=None, params_l=None):
    """Control points of every stroke at time t (canonical + suppressed change)."""
    cp = strokes if strokes is not None else model.canonical_strokes
    disp, _, _, _ = sketch_displacement(model, t, tape=tape, strokes=strokes,
                                        params_r=params_r, params_t=params_t,
                                        params_l=params_l)
    return cp + disp


def render_sketch(model, camera, t, raster_cfg=None, tape=None, **kw):
    """Project the strokes at t and rasterize; strokes with any control point
    behind the camera are dropped from the frame (and logged)."""
    strokes3d = sketch_at(model, t, tape=tape, **kw)
    vals = ad.value_of(strokes3d)
    n = vals.shape[0]
    r = camera.extrinsic[:3, :3]
    tvec = camera.extrinsic[:3, 3]
    depths = vals.reshape(-1, 3) @ r[2] + tvec[2]
    ok = (depths.reshape(n, 4) > 1e-6).all(axis=1)
    if not ok.all():
        log.info("dropping %d stroke(s) behind the camera", int((~ok).sum()))
    curves = []
    for i in range(n):
        if not ok[i]:
            continue
        cam = ad.matmul(strokes3d[i], r.T) + tvec
        z = cam[:, 2]
        x = camera.fx * cam[:, 0] / z + camera.cx
        y = camera.fy * cam[:, 1] / z + camera.cy
        curves.append(ad.stack([x, y], axis=-1))
    return raster_strokes(curves, camera.width, camera.height,
                          raster_cfg or StrokeRasterConfig(), tape=tape)


def sketch_frame_loss(model, target_image, camera, t, dist_backend,
                      embed_backend, cfg, tape=None, raster_cfg=None, **kw):
    """lambda_s * rho(image distance) + cosine distance of global embeddings."""
    render = render_sketch(model, camera, t, raster_cfg=raster_cfg,
                           tape=tape, **kw)
    term_img = robust_rho(image_distance(dist_backend, target_image, render,
                                         tape=tape), RobustParams())
    emb_i = global_embedding(embed_backend, target_image)
    emb_s = global_embedding(embed_backend, render, tape=tape)
    return cfg.lambda_s * term_img + cosine_distance(emb_i, emb_s)


def sketch_temporal_loss(model, sample, cfg, tape=None, **kw):
    """Velocity of the post-suppression displacements, averaged over points."""
    if sample.t == sample.t_prev:
        raise ValueError("temporal loss needs two distinct time steps")
    d_t, _, _, _ = sketch_displacement(model, sample.t, tape=tape, **kw)
    d_p, _, _, _ = sketch_displacement(model, sample.t_prev, tape=tape, **kw)
    vel = (d_t - d_p) / (sample.t - sample.t_prev)
    per_point = ad.norm(vel, axis=-1)
    return cfg.lambda_t * ad.mean(per_point)


def sketch_reg_loss(model, t, stage, cfg, tape=None, **kw):
    """Coarse: quaternion/translation deviation; fine: raw net_L magnitude."""
    if stage not in ("coarse", "fine"):
        raise ValueError(f"unknown stage {stage!r}")
    _, delta_l, q, trans = sketch_displacement(model, t, tape=tape, **kw)
    if stage == "coarse":
        q_vals = ad.value_of(q)
        # canonical sign (w >= 0) before measuring deviation under the double cover
        signs = np.where(q_vals[:, 0] < 0, -1.0, 1.0)
        qc = q * signs[:, None]
        dev = ad.norm(qc - np.array([1.0, 0.0, 0.0, 0.0]), axis=1)
        return cfg.lambda_r * (ad.mean(dev) + ad.mean(ad.norm(trans, axis=1)))
    return cfg.lambda_l * ad.mean(ad.norm(delta_l, axis=-1))


def _load_targets(manifest, scale):
    out = []
    for f in manifest.frames:
        img = load_image(f.image_path)
        cam = f.camera.scaled(scale)
        if (img.shape[1], img.shape[0]) != (cam.width, cam.height):
            img = resize_area(img, cam.width, cam.height)
        out.append((img, cam, f.t))
    return out


def train_sketch(manifest, guidance_model, cfg, dist_backend, embed_backend,
                 callback=None):
    """Two-stage optimization.

    Coarse: canonical strokes + net_R + net_T at the coarse resolution with
    the rigid regularizer.  Fine: canonical strokes + net_L at full
    resolution with the delta regularizer; the transform nets are frozen
    (configurable).  Canonical control points train throughout.
    """
    model = make_sketch_model(guidance_model, cfg)
    rng = np.random.default_rng(cfg.seed)
    dt = manifest.frame_interval()
    stages = [("coarse", cfg.coarse_iterations, cfg.coarse_scale),
              ("fine", cfg.fine_iterations, cfg.fine_scale)]
    for stage, iters, scale in stages:
        if iters == 0:
            continue
        targets = _load_targets(manifest, scale)
        raster_cfg = cfg.raster.scaled(scale)
        adam_cp = nn.AdamState(lr=cfg.lr_other)
        adam_r = nn.AdamState(lr=cfg.lr_transform)
        adam_t = nn.AdamState(lr=cfg.lr_transform)
        adam_l = nn.AdamState(lr=cfg.lr_other)
        for it in range(iters):
            img, cam, t = targets[int(rng.integers(len(targets)))]
            sample = TimeSample.draw(t, dt, rng)
            tape = ad.GradTape()
            cp_var = ad.Var(model.canonical_strokes, tape=tape)
            train_transform = stage == "coarse" or not cfg.freeze_transform_in_fine
            p_r = nn.wrap_params(model.net_r, tape) if train_transform else None
            p_t = nn.wrap_params(model.net_t, tape) if train_transform else None
            p_l = nn.wrap_params(model.net_l, tape) if stage == "fine" else None
            kw = dict(strokes=cp_var, params_r=p_r, params_t=p_t, params_l=p_l)
            loss = sketch_frame_loss(model, img, cam, t, dist_backend,
                                     embed_backend, cfg, tape=tape,
                                     raster_cfg=raster_cfg, **kw)
            loss = loss + sketch_temporal_loss(model, sample, cfg, tape=tape, **kw)
            loss = loss + sketch_reg_loss(model, t, stage, cfg, tape=tape, **kw)
            lval = float(ad.value_of(loss))
            if not np.isfinite(lval):
                raise FloatingPointError(f"non-finite loss at {stage} iteration {it}")
            tape.backward(loss)
            nn.adam_step([model.canonical_strokes], [cp_var.grad], adam_cp)
            if p_r is not None:
                nn.adam_step(model.net_r.parameters(), [v.grad for v in p_r], adam_r)
                nn.adam_step(model.net_t.parameters(), [v.grad for v in p_t], adam_t)
            if p_l is not None:
                nn.adam_step(model.net_l.parameters(), [v.grad for v in p_l], adam_l)
            if callback is not None:
                callback(stage, it, lval, model)
            if it % 50 == 0:
                log.info("sketch %s iteration %d: loss %.6f", stage, it, lval)
    return model


# -- checkpointing ("L3SS") ----------------------------------------------------

def save_sketch(model, path):
    from .guidance import _write_mlp
    with open(path, "wb") as fh:
        fh.write(SKETCH_MAGIC)
        fh.write(struct.pack("<I", SKETCH_VERSION))
        fh.write(struct.pack("<II", model.encoder.l_spatial, model.encoder.l_temporal))
        fh.write(struct.pack("<dd", model.suppression.a, model.suppression.b))
        write_array(fh, model.canonical_strokes)
        write_array(fh, model.anchors)
        for net in (model.net_r, model.net_t, model.net_l):
            _write_mlp(fh, net)


def load_sketch(path):
    from .guidance import _read_mlp
    with open(path, "rb") as fh:
        if fh.read(4) != SKETCH_MAGIC:
            raise ValueError(f"{path}: not a sketch checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != SKETCH_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        ls, lt = struct.unpack("<II", fh.read(8))
        a, b = struct.unpack("<dd", fh.read(16))
        strokes = read_array(fh)
        anchors = read_array(fh)
        nets = [_read_mlp(fh) for _ in range(3)]
    return SketchModel(strokes, anchors, nets[0], nets[1], nets[2],
                       nn.EncoderConfig(ls, lt), SuppressionParams(a, b))
