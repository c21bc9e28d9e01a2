"""Dataset manifests, image I/O and export formats (SVG, PNG, PLY, animation JSON)."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import Camera


class ManifestError(ValueError):
    """A scene manifest failed validation."""


@dataclass
class FrameRecord:
    image_path: Path
    t: float
    camera: Camera


@dataclass
class SceneManifest:
    """Ordered frame records describing one input video."""
    frames: list
    scene_box: np.ndarray | None = None  # (2, 3) min/max corners
    version: int = 1

    def times(self):
        return sorted({f.t for f in self.frames})

    def frame_interval(self):
        ts = self.times()
        if len(ts) < 2:
            return 1.0
        return 1.0 / (len(ts) - 1)


def _camera_to_dict(cam):
    return {
        "extrinsic": cam.extrinsic.tolist(),
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height,
    }


def _camera_from_dict(d):
    return Camera(np.array(d["extrinsic"], dtype=np.float64),
                  float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                  int(d["width"]), int(d["height"]))


def save_manifest(manifest, path):
    path = Path(path)
    doc = {
        "version": manifest.version,
        "frames": [
            {"image": (Path(f.image_path).name
                       if Path(f.image_path).parent == path.parent
                       else str(f.image_path)),
             "t": f.t,
             "camera": _camera_to_dict(f.camera)}
            for f in manifest.frames
        ],
    }
    if manifest.scene_box is not None:
        doc["scene_box"] = np.asarray(manifest.scene_box).tolist()
    path.write_text(json.dumps(doc, indent=1))


def load_manifest(path):
    """Load and validate a manifest JSON; image paths resolve relative to it."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: invalid JSON ({e})") from e
    if "frames" not in doc or not doc["frames"]:
        raise ManifestError(f"{path}: manifest has no frames")
    frames = []
    for i, fd in enumerate(doc["frames"]):
        try:
            t = float(fd["t"])
            cam = _camera_from_dict(fd["camera"])
            img = fd["image"]
        except (KeyError, TypeError, ValueError) as e:
            raise ManifestError(f"{path}: frame {i} malformed ({e})") from e
        if not 0.0 <= t <= 1.0:
            raise ManifestError(f"{path}: frame {i} has t={t} outside [0, 1]")
        img_path = Path(img)
        if not img_path.is_absolute():
            img_path = path.parent / img_path
        frames.append(FrameRecord(img_path, t, cam))
    box = None
    if "scene_box" in doc:
        box = np.array(doc["scene_box"], dtype=np.float64)
        if box.shape != (2, 3):
            raise ManifestError(f"{path}: scene_box must be a 2x3 min/max pair")
    return SceneManifest(frames, box, int(doc.get("version", 1)))


# OpenGL-style camera (look down -Z, +Y up) to our +Z-forward convention.
_GL_FLIP = np.diag([1.0, -1.0, -1.0])


def import_dnerf(transforms_json_path, image_dir):
    """Build a manifest from a D-NeRF style transforms file.

    fx = fy = 0.5 W / tan(0.5 camera_angle_x); camera-to-world matrices are
    converted with the OpenGL axis flip (negate the rotation's Y and Z
    columns) and inverted to world-to-camera.
    """
    path = Path(transforms_json_path)
    doc = json.loads(path.read_text())
    if "camera_angle_x" not in doc or "frames" not in doc:
        raise ManifestError(f"{path}: missing camera_angle_x or frames")
    image_dir = Path(image_dir)
    frames = []
    for i, fd in enumerate(doc["frames"]):
        if "transform_matrix" not in fd or "time" not in fd:
            raise ManifestError(f"{path}: frame {i} missing transform_matrix or time")
        rel = fd.get("file_path", f"r_{i:03d}")
        img_path = image_dir / rel
        for suffix in ("", ".png", ".jpg"):
            if img_path.with_name(img_path.name + suffix).exists():
                img_path = img_path.with_name(img_path.name + suffix)
                break
        with Image.open(img_path) as im:
            w, h = im.size
        f = 0.5 * w / np.tan(0.5 * float(doc["camera_angle_x"]))
        c2w = np.array(fd["transform_matrix"], dtype=np.float64)
        c2w = c2w.copy()
        c2w[:3, :3] = c2w[:3, :3] @ _GL_FLIP
        w2c = np.eye(4)
        w2c[:3, :3] = c2w[:3, :3].T
        w2c[:3, 3] = -c2w[:3, :3].T @ c2w[:3, 3]
        cam = Camera(w2c, f, f, w / 2.0, h / 2.0, w, h)
        frames.append(FrameRecord(img_path, float(fd["time"]), cam))
    return SceneManifest(frames)


# -- images ------------------------------------------------------------------

def save_png(image, path):
    """Save a [0, 1] grayscale array as an 8-bit PNG."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="L").save(path)


def load_image(path):
    """Load a PNG/JPEG as grayscale [0, 1]; RGB inputs use the luminance mix."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image not found: {path}")
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return arr


def resize_area(image, width, height):
    """Area-average (box filter) resampling for the resolution schedule."""
    im = Image.fromarray(np.asarray(image, dtype=np.float64).astype(np.float32), mode="F")
    out = im.resize((width, height), resample=Image.BOX)
    return np.asarray(out, dtype=np.float64)


# -- vector / animation exports ----------------------------------------------

def export_svg(strokes2d, width, height, path, stroke_width=1.5):
    """Write one SVG: white background rect plus one cubic path per stroke."""
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for cp in strokes2d:
        cp = np.asarray(cp, dtype=np.float64)
        d = (f"M {cp[0, 0]:.3f} {cp[0, 1]:.3f} "
             f"C {cp[1, 0]:.3f} {cp[1, 1]:.3f}, "
             f"{cp[2, 0]:.3f} {cp[2, 1]:.3f}, "
             f"{cp[3, 0]:.3f} {cp[3, 1]:.3f}")
        lines.append(f'<path d="{d}" stroke="black" stroke-width="{stroke_width}" '
                     'fill="none" stroke-linecap="round"/>')
    lines.append("</svg>")
    Path(path).write_text("\n".join(lines) + "\n")


def export_animation(stroke_frames, times, path, metadata=None):
    """Write per-timestep stroke control points as versioned JSON."""
    stroke_frames = [np.asarray(s, dtype=np.float64) for s in stroke_frames]
    if len(stroke_frames) != len(times):
        raise ValueError("one stroke set per timestep required")
    counts = {s.shape[0] for s in stroke_frames}
    if len(counts) > 1:
        raise ValueError("stroke count must be constant across timesteps")
    doc = {
        "version": 1,
        "stroke_count": stroke_frames[0].shape[0] if stroke_frames else 0,
        "timesteps": [
            {"t": float(t), "strokes": s.tolist()}
            for t, s in zip(times, stroke_frames)
        ],
    }
    if metadata:
        doc["metadata"] = metadata
    Path(path).write_text(json.dumps(doc, indent=1))


def load_animation(path):
    """Read an animation JSON; returns (list of (n,4,3) arrays, times, metadata)."""
    doc = json.loads(Path(path).read_text())
    frames = [np.array(ts["strokes"], dtype=np.float64) for ts in doc["timesteps"]]
    times = [float(ts["t"]) for ts in doc["timesteps"]]
    return frames, times, doc.get("metadata", {})


# -- point clouds --------------------------------------------------------------

def save_ply(points, path):
    """ASCII PLY point cloud writer."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {points.shape[0]}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("end_header\n")
        for p in points:
            fh.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")


def load_ply(path):
    """Read the ASCII PLY files written by `save_ply`."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    try:
        end = lines.index("end_header")
    except ValueError:
        raise ValueError(f"{path}: missing PLY header terminator") from None
    count = 0
    for ln in lines[:end]:
        if ln.startswith("element vertex"):
            count = int(ln.split()[-1])
    pts = [tuple(map(float, ln.split()[:3])) for ln in lines[end + 1:end + 1 + count]]
    return np.array(pts, dtype=np.float64).reshape(count, 3)


# -- binary checkpoint helpers -------------------------------------------------

def write_array(fh, arr):
    arr = np.asarray(arr, dtype=np.float64)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.astype("<f8").tobytes())


def read_array(fh):
    (ndim,) = struct.unpack("<I", fh.read(4))
    shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
    n = int(np.prod(shape))
    return np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape).copy()
