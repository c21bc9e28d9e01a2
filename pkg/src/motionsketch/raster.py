"""Differentiable rasterizers: Gaussian point splatting and soft stroke coverage.

Images are float64 arrays of shape (H, W) with values in [0, 1]; inside a
recorded computation they are autodiff Vars of the same shape.  Both
rasterizers are fused custom ops with analytic backward passes, so the tape
never stores per-pixel-per-primitive intermediates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from .geometry import bezier_basis


@dataclass
class SplatConfig:
    """Gaussian splatting parameters (scaling, deblurring, minimum size)."""
    mu: float = 10.0
    beta: float = 0.5
    sigma_min: float = 1e-3

    def __post_init__(self):
        if self.mu <= 0 or self.beta <= 0 or self.sigma_min <= 0:
            raise ValueError("splat parameters must be positive")


@dataclass
class StrokeRasterConfig:
    """Soft coverage stroke rendering parameters, in pixels at the target size."""
    stroke_width: float = 1.5
    softness: float = 1.0
    polyline_segments: int = 32

    def __post_init__(self):
        if self.stroke_width <= 0 or self.softness <= 0:
            raise ValueError("stroke width and softness must be positive")
        if self.polyline_segments < 4:
            raise ValueError("need at least 4 polyline segments")

    def scaled(self, factor):
        """Width scaled proportionally for a resized render; softness kept."""
        return StrokeRasterConfig(self.stroke_width * factor, self.softness,
                                  self.polyline_segments)


def _pixel_grid(width, height):
    ys, xs = np.mgrid[0:height, 0:width]
    return xs.reshape(-1).astype(np.float64), ys.reshape(-1).astype(np.float64)


def _gaussian_sum(points_norm, sigma, gx, gy):
    """Fused op: J_i = sum_j exp(-|grid_i - p_j|^2 / (2 sigma_j^2)).

    `points_norm` (N, 2) and `sigma` (N,) may be Vars; returns a (H*W,) value.
    """
    pv = ad.value_of(points_norm)
    sv = ad.value_of(sigma)
    dx = gx[:, None] - pv[:, 0]
    dy = gy[:, None] - pv[:, 1]
    d2 = dx * dx + dy * dy
    w = np.exp(-d2 / (2.0 * sv * sv))
    j = w.sum(axis=1)
    if not isinstance(points_norm, ad.Var) and not isinstance(sigma, ad.Var):
        return j
    out = ad.Var(j, tape=ad._tape_of(points_norm, sigma),
                 parents=(points_norm, sigma))

    def _backward(g):
        gw = g[:, None] * w
        if isinstance(points_norm, ad.Var):
            inv_s2 = 1.0 / (sv * sv)
            gp = np.stack([(gw * dx).sum(axis=0) * inv_s2,
                           (gw * dy).sum(axis=0) * inv_s2], axis=1)
            points_norm._accum(gp)
        if isinstance(sigma, ad.Var):
            gs = (gw * d2).sum(axis=0) / (sv ** 3)
            sigma._accum(gs)
    out._backward = _backward
    return out


def splat_points(points2d, depths, width, height, cfg=None, tape=None):
    """Sum per-point Gaussians over the pixel grid and normalize by the max.

    `points2d` is (N, 2) in pixel coordinates, `depths` (N,) camera-space
    depths; both may be Vars.  Point size shrinks with depth (the nearest
    point gets the largest footprint); distances are measured in normalized
    image coordinates (pixels / min(W, H)).  The peak used for normalization
    participates in the backward pass (max with tie splitting).
    """
    cfg = cfg or SplatConfig()
    if ad.value_of(points2d).size == 0:
        zero = np.zeros((height, width))
        return ad.Var(zero, tape=tape) if tape is not None else zero
    n = ad.value_of(points2d).shape[0]
    scale = 1.0 / min(width, height)
    gx, gy = _pixel_grid(width, height)
    pts_norm = points2d * scale
    dvals = ad.value_of(depths)
    if np.allclose(dvals, dvals[0]):
        dhat = np.ones(n)
    else:
        dmax = ad.reduce_max(depths)
        dmin = ad.reduce_min(depths)
        dhat = (dmax - depths) / (dmax - dmin)
    sigma = ad.clip_lower(2.0 * scale * cfg.beta * dhat, cfg.sigma_min)
    j = _gaussian_sum(pts_norm, sigma, gx * scale, gy * scale)
    if float(np.max(ad.value_of(j))) > 0:
        j = j / ad.reduce_max(j)
    return j.reshape((height, width))


def guidance_image(intensity):
    """Black-on-white polarity flip: 1 - J."""
    return 1.0 - intensity


def to_rgb(gray):
    """Replicate a grayscale image to three channels (H, W, 3)."""
    g = ad.value_of(gray)
    return np.repeat(g[:, :, None], 3, axis=2)


def _polyline_distance(poly, gx, gy):
    """Fused op: per-pixel distance to a polyline, (H*W,).

    Backward uses the envelope theorem: at the minimizing segment and
    parameter, the distance gradient with respect to the segment endpoints
    is evaluated with the parameter held fixed.
    """
    pv = ad.value_of(poly)
    a = pv[:-1]
    ab = pv[1:] - a
    ab2 = np.maximum((ab * ab).sum(axis=1), 1e-12)
    pax = gx[:, None] - a[:, 0]
    pay = gy[:, None] - a[:, 1]
    t = np.clip((pax * ab[:, 0] + pay * ab[:, 1]) / ab2, 0.0, 1.0)
    ex = pax - t * ab[:, 0]
    ey = pay - t * ab[:, 1]
    d2 = ex * ex + ey * ey
    seg = np.argmin(d2, axis=1)
    rows = np.arange(d2.shape[0])
    dist = np.sqrt(d2[rows, seg])
    if not isinstance(poly, ad.Var):
        return dist
    t_min = t[rows, seg]
    ex_min = ex[rows, seg]
    ey_min = ey[rows, seg]
    out = ad.Var(dist, tape=poly.tape, parents=(poly,))

    def _backward(g):
        safe = np.where(dist > 0, dist, 1.0)
        coef = np.where(dist > 0, g / safe, 0.0)
        # d dist / d closest = -(e / dist); closest = a + t (b - a), t fixed
        gcx = -coef * ex_min
        gcy = -coef * ey_min
        gp = np.zeros_like(pv)
        wa = 1.0 - t_min
        np.add.at(gp[:, 0], seg, gcx * wa)
        np.add.at(gp[:, 1], seg, gcy * wa)
        np.add.at(gp[:, 0], seg + 1, gcx * t_min)
        np.add.at(gp[:, 1], seg + 1, gcy * t_min)
        poly._accum(gp)
    out._backward = _backward
    return out


def raster_strokes(curves2d, width, height, cfg=None, tape=None):
    """Render 2D cubic Beziers as black soft strokes on white.

    Per pixel and stroke, coverage = logistic((w/2 - dist) / softness) with
    dist taken against the stroke's polyline; strokes over-compose
    multiplicatively: pixel = prod_s (1 - c_s).
    """
    cfg = cfg or StrokeRasterConfig()
    curves = list(curves2d)
    if not curves:
        ones = np.ones((height, width))
        return ad.Var(ones, tape=tape) if tape is not None else ones
    gx, gy = _pixel_grid(width, height)
    basis = bezier_basis(np.linspace(0.0, 1.0, cfg.polyline_segments + 1))
    half_w = 0.5 * cfg.stroke_width
    out = None
    for cp in curves:
        poly = ad.matmul(basis, cp)  # (S+1, 2)
        dist = _polyline_distance(poly, gx, gy)
        keep = 1.0 - ad.sigmoid((half_w - dist) / cfg.softness)
        out = keep if out is None else out * keep
    return out.reshape((height, width))


def _sigmoid_np(x):
    return expit(x)
