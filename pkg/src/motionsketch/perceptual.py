"""Robust loss, image-distance backends and global embeddings.

The built-in backends are deterministic stand-ins for pretrained perceptual
networks: `pyramid_gradient` compares intensity and gradient channels across
a half-resolution pyramid, `orientation_histogram` embeds an image by
oriented gradient energy over a coarse grid.  `external_features` compares
feature maps computed offline by the user (see `read_feature_file`).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad

FEATURE_MAGIC = b"L3SF"


@dataclass
class RobustParams:
    """Shape/scale of the robust penalty applied to scalar distances."""
    alpha: float = 1.0
    c: float = 0.1

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("scale c must be positive")


def robust_rho(x, params=None):
    """General robust penalty; for alpha=1 this is sqrt((x/c)^2 + 1) - 1."""
    params = params or RobustParams()
    a, c = params.alpha, params.c
    s = (x / c) * (x / c)
    if a == 1.0:
        return ad.safe_sqrt(s + 1.0) - 1.0
    if a == 2.0:
        return 0.5 * s
    if a == 0.0:
        return _log1p(0.5 * s)
    k = abs(a - 2.0)
    return (k / a) * ((s / k + 1.0) ** (a / 2.0) - 1.0)


def _log1p(x):
    if isinstance(x, ad.Var):
        return ad._unary(x, np.log1p, lambda g, v, out: g / (1.0 + v))
    return np.log1p(x)


@dataclass
class ImageDistanceBackend:
    """Pluggable image distance: pixel_robust, pyramid_gradient or external_features."""
    tag: str = "pyramid_gradient"
    levels: int = 3
    robust: RobustParams = field(default_factory=RobustParams)
    feature_dir: str | None = None

    def __post_init__(self):
        if self.tag not in ("pixel_robust", "pyramid_gradient", "external_features"):
            raise ValueError(f"unknown image distance backend {self.tag!r}")
        if self.tag == "external_features" and self.feature_dir is None:
            raise ValueError("external_features requires feature_dir")


def _half_pool(img):
    """2x2 average pooling; odd trailing rows/columns are dropped."""
    v = ad.value_of(img)
    h, w = v.shape[0] // 2 * 2, v.shape[1] // 2 * 2
    img = img[:h, :w]
    r = img.reshape((h // 2, 2, w // 2, 2))
    return r.mean(axis=3).mean(axis=1) if isinstance(r, ad.Var) else r.mean(axis=(1, 3))


def _gradient_channels(img):
    """Forward-difference x/y gradients padded back to the image size."""
    dx = img[:, 1:] - img[:, :-1]
    dy = img[1:, :] - img[:-1, :]
    return dx, dy


def image_distance(backend, image_a, image_b, tape=None, key_a=None, key_b=None):
    """Scalar distance between two same-sized images; 0 iff pixel-identical
    for the built-in backends.  Differentiable with respect to `image_b`.
    """
    va, vb = ad.value_of(image_a), ad.value_of(image_b)
    if backend.tag != "external_features" and va.shape != vb.shape:
        raise ValueError(f"image shapes differ: {va.shape} vs {vb.shape}")
    if backend.tag == "pixel_robust":
        return ad.mean(robust_rho(ad.absolute(image_b - image_a), backend.robust))
    if backend.tag == "pyramid_gradient":
        total = 0.0
        a, b = image_a, image_b
        for level in range(backend.levels):
            diff = b - a
            total = total + ad.mean(diff * diff)
            dxa, dya = _gradient_channels(a)
            dxb, dyb = _gradient_channels(b)
            ddx = dxb - dxa
            ddy = dyb - dya
            total = total + ad.mean(ddx * ddx) + ad.mean(ddy * ddy)
            if level < backend.levels - 1:
                if min(ad.value_of(a).shape) < 2:
                    break  # image exhausted before the requested depth
                a, b = _half_pool(a), _half_pool(b)
        return total / float(level + 1)
    # external_features: compare offline feature tensors keyed by frame
    fa = load_features(backend.feature_dir, key_a)
    fb = load_features(backend.feature_dir, key_b)
    if len(fa) != len(fb):
        raise ValueError("feature files hold different tensor counts")
    total = 0.0
    for ta, tb in zip(fa, fb):
        if ta.shape != tb.shape:
            raise ValueError("feature tensor shapes differ")
        total += float(np.mean((ta - tb) ** 2))
    return total / max(1, len(fa))


def cosine_distance(x, y):
    """1 - cos angle between two nonzero vectors; in [0, 2]."""
    nx = ad.norm(x)
    ny = ad.norm(y)
    if ad.value_of(nx) == 0 or ad.value_of(ny) == 0:
        raise ValueError("cosine distance undefined for zero vectors")
    return 1.0 - ad.reduce_sum(x * y) / (nx * ny)


@dataclass
class EmbeddingBackend:
    """Global image embedding: orientation_histogram or external_embedding."""
    tag: str = "orientation_histogram"
    grid: int = 4
    bins: int = 8
    eps: float = 1e-6
    feature_dir: str | None = None

    def __post_init__(self):
        if self.tag not in ("orientation_histogram", "external_embedding"):
            raise ValueError(f"unknown embedding backend {self.tag!r}")


def global_embedding(backend, image, tape=None, key=None):
    """Fixed-length nonzero descriptor of an image.

    orientation_histogram: oriented gradient energy (rectified projections on
    `bins` directions) pooled over a `grid` x `grid` cell partition, then
    L2-normalized with an epsilon-uniform floor so constant images map to a
    well-defined fallback vector.
    """
    if backend.tag == "external_embedding":
        feats = load_features(backend.feature_dir, key)
        return np.concatenate([f.ravel() for f in feats])
    v = ad.value_of(image)
    h, w = v.shape
    gx = image[:, 1:] - image[:, :-1]
    gy = image[1:, :] - image[:-1, :]
    # crop to the common (h-1, w-1) support
    gx = gx[:-1, :]
    gy = gy[:, :-1]
    angles = np.arange(backend.bins) * (2.0 * np.pi / backend.bins)
    cells = []
    rows = np.linspace(0, h - 1, backend.grid + 1).astype(int)
    cols = np.linspace(0, w - 1, backend.grid + 1).astype(int)
    for r0, r1 in zip(rows[:-1], rows[1:]):
        for c0, c1 in zip(cols[:-1], cols[1:]):
            cgx = gx[r0:r1, c0:c1]
            cgy = gy[r0:r1, c0:c1]
            for th in angles:
                resp = ad.relu(cgx * np.cos(th) + cgy * np.sin(th))
                cells.append(ad.mean(resp * resp))
    hist = ad.stack(cells)
    dim = backend.grid * backend.grid * backend.bins
    uniform = backend.eps / np.sqrt(dim)
    hist = hist + uniform
    return hist / ad.norm(hist)


# -- offline feature files ("L3SF") -----------------------------------------

def write_feature_file(path, tensors):
    """Write float32 feature tensors: magic, u32 count, per-tensor dims, payload."""
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for t in tensors:
            t = np.asarray(t, dtype=np.float32)
            fh.write(struct.pack("<I", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
            fh.write(t.astype("<f4").tobytes())


def read_feature_file(path):
    """Read tensors written by `write_feature_file`."""
    data = Path(path).read_bytes()
    if data[:4] != FEATURE_MAGIC:
        raise ValueError(f"{path}: not a feature file (bad magic)")
    off = 4
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    tensors = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        n = int(np.prod(shape))
        t = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(shape)
        off += 4 * n
        tensors.append(np.asarray(t, dtype=np.float64))
    return tensors


def load_features(feature_dir, key):
    """Per-frame features live at <dir>/<key>.l3sf, keyed by frame index."""
    if feature_dir is None or key is None:
        raise ValueError("external features need a directory and a frame key")
    path = Path(feature_dir) / f"{key}.l3sf"
    if not path.exists():
        raise FileNotFoundError(f"missing feature file {path}")
    return read_feature_file(path)
