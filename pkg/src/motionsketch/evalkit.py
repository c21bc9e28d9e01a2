"""Metrics (Chamfer, motion velocity, static drift) and the synthetic
ground-truth scene generator used for desk-scale evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Camera, bezier_polyline, project_curve, quat_to_matrix
from .raster import StrokeRasterConfig, raster_strokes
from .scene_io import FrameRecord, SceneManifest, export_animation, save_manifest, \
    save_ply, save_png
from .sketch import sketch_at

GT_SAMPLES_PER_STROKE = 32

PRESETS = ("rigid_rotor", "bender", "static")


@dataclass
class PointCloudSequence:
    """Ordered (t, (N, 3) points) samples with strictly increasing times."""
    times: list
    clouds: list

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("times must be strictly increasing")
        if len(self.times) != len(self.clouds):
            raise ValueError("one cloud per time required")


def chamfer(points_a, points_b):
    """Symmetric mean nearest-neighbor Euclidean distance."""
    a = np.atleast_2d(np.asarray(points_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(points_b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValueError("chamfer distance needs non-empty point sets")
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return 0.5 * (float(d_ab.mean()) + float(d_ba.mean()))


def motion_velocity_distance(pred, gt):
    """Mean L2 gap between ground-truth and predicted per-step displacements.

    Each ground-truth point at the earlier time is matched to its nearest
    predicted point; displacements are then compared under the induced
    correspondence.  Invariant to a static global offset of the prediction.
    """
    if len(pred.times) != len(gt.times) or not np.allclose(pred.times, gt.times):
        raise ValueError("sequences must share timestamps")
    if len(gt.times) < 2:
        raise ValueError("need at least two timesteps")
    errs = []
    for k in range(len(gt.times) - 1):
        tree = cKDTree(pred.clouds[k])
        _, idx = tree.query(gt.clouds[k])
        disp_gt = gt.clouds[k + 1] - gt.clouds[k]
        disp_pred = pred.clouds[k + 1][idx] - pred.clouds[k][idx]
        errs.append(np.linalg.norm(disp_gt - disp_pred, axis=1).mean())
    return float(np.mean(errs))


def static_drift(model, times):
    """Largest control-point displacement between any two of the given times."""
    if len(times) < 2:
        raise ValueError("need at least two times")
    sketches = [np.asarray(sketch_at(model, t)) for t in times]
    worst = 0.0
    for i in range(len(sketches)):
        for j in range(i + 1, len(sketches)):
            d = np.linalg.norm(sketches[i] - sketches[j], axis=-1).max()
            worst = max(worst, float(d))
    return worst


@dataclass
class SynthSceneSpec:
    preset: str = "rigid_rotor"
    stroke_count: int = 6
    frame_count: int = 16
    view_count: int = 20
    image_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {PRESETS}")
        for c in (self.stroke_count, self.frame_count, self.view_count, self.image_size):
            if c < 1:
                raise ValueError("all counts must be >= 1")


def _base_strokes(spec, rng):
    """Seeded smooth strokes inside a ~0.4-radius ball around the origin."""
    strokes = np.empty((spec.stroke_count, 4, 3))
    for i in range(spec.stroke_count):
        p = rng.uniform(-0.3, 0.3, size=3)
        strokes[i, 0] = p
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        for j in range(1, 4):
            direction = direction + 0.6 * rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            p = np.clip(p + 0.18 * direction, -0.42, 0.42)
            strokes[i, j] = p
    return strokes


def _strokes_at(base, t, spec, rng_axis):
    """Ground-truth stroke control points at normalized time t."""
    if spec.preset == "static":
        return base.copy()
    if spec.preset == "rigid_rotor":
        axis = rng_axis / np.linalg.norm(rng_axis)
        angle = np.deg2rad(60.0) * t
        q = np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])
        rot = quat_to_matrix(q)
        trans = np.array([0.25, 0.0, 0.1]) * t
        return base @ rot.T + trans
    # bender: inner control points oscillate, endpoints stay put
    out = base.copy()
    n = base.shape[0]
    for i in range(n):
        phase = 2.0 * np.pi * i / n
        offset = 0.12 * np.sin(2.0 * np.pi * t + phase)
        out[i, 1, 2] += offset
        out[i, 2, 2] -= offset
    return out


def hemisphere_cameras(view_count, image_size, radius=2.5, focal_scale=1.2):
    """Cameras on an upper hemisphere, all looking at the origin."""
    cams = []
    for k in range(view_count):
        az = 2.0 * np.pi * k / view_count
        el = np.deg2rad(25.0 + 40.0 * ((k * 0.618) % 1.0))
        eye = radius * np.array([np.cos(el) * np.cos(az),
                                 np.cos(el) * np.sin(az),
                                 np.sin(el)])
        z_c = -eye / np.linalg.norm(eye)  # +Z looks at the origin
        up = np.array([0.0, 0.0, 1.0])
        x_c = np.cross(up, z_c)
        if np.linalg.norm(x_c) < 1e-9:
            x_c = np.array([1.0, 0.0, 0.0])
        x_c /= np.linalg.norm(x_c)
        y_c = np.cross(z_c, x_c)
        w2c = np.eye(4)
        w2c[:3, :3] = np.stack([x_c, y_c, z_c])
        w2c[:3, 3] = -w2c[:3, :3] @ eye
        f = focal_scale * image_size
        cams.append(Camera(w2c, f, f, image_size / 2.0, image_size / 2.0,
                           image_size, image_size))
    return cams


def gt_point_clouds(stroke_frames, times):
    clouds = []
    for strokes in stroke_frames:
        pts = [bezier_polyline(cp, GT_SAMPLES_PER_STROKE - 1) for cp in strokes]
        clouds.append(np.concatenate([p[:GT_SAMPLES_PER_STROKE] for p in pts]))
    return PointCloudSequence(list(times), clouds)


def generate_synthetic_scene(spec, out_dir, raster_cfg=None):
    """Render a seeded ground-truth scene to `out_dir`.

    Writes a manifest, one PNG per (timestep, view), the stroke animation and
    per-timestep point clouds.  Returns (manifest, stroke animation frames,
    PointCloudSequence).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    base = _base_strokes(spec, rng)
    rot_axis = rng.normal(size=3) + np.array([0.0, 0.0, 1.0])
    if spec.frame_count == 1:
        times = [0.0]
    else:
        times = [i / (spec.frame_count - 1) for i in range(spec.frame_count)]
    stroke_frames = [_strokes_at(base, t, spec, rot_axis) for t in times]
    cameras = hemisphere_cameras(spec.view_count, spec.image_size)
    raster_cfg = raster_cfg or StrokeRasterConfig()
    frames = []
    for ti, (t, strokes) in enumerate(zip(times, stroke_frames)):
        for vi, cam in enumerate(cameras):
            curves = [project_curve(cam, cp) for cp in strokes]
            img = raster_strokes(curves, cam.width, cam.height, raster_cfg)
            name = f"frame_t{ti:03d}_v{vi:02d}.png"
            save_png(img, out_dir / name)
            frames.append(FrameRecord(out_dir / name, t, cam))
    clouds = gt_point_clouds(stroke_frames, times)
    all_pts = np.concatenate(clouds.clouds)
    lo, hi = all_pts.min(axis=0), all_pts.max(axis=0)
    pad = 0.2 * (hi - lo).max() + 1e-3
    manifest = SceneManifest(frames, np.array([lo - pad, hi + pad]))
    save_manifest(manifest, out_dir / "manifest.json")
    export_animation(stroke_frames, times, out_dir / "gt_animation.json",
                     metadata={"preset": spec.preset, "seed": spec.seed})
    for ti, cloud in enumerate(clouds.clouds):
        save_ply(cloud, out_dir / f"gt_points_{ti:03d}.ply")
    return manifest, stroke_frames, clouds
