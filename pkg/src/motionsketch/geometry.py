"""Bezier curves, quaternions, cameras, rigid alignment and point sampling.

Points are float64 ndarrays: (3,) for a single point, (N, 3) for clouds,
(4, 3) for the control polygon of one cubic stroke.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree


class BehindCameraError(ValueError):
    """A point to be projected has non-positive camera-space depth."""


class AlignmentError(ValueError):
    """Rigid alignment is undefined for the given correspondences."""


def bezier_basis(u):
    """Bernstein basis of degree 3 evaluated at u; shape (len(u), 4)."""
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = 1.0 - u
    return np.stack([v ** 3, 3 * v ** 2 * u, 3 * v * u ** 2, u ** 3], axis=-1)


def bezier_point(control_points, u):
    """Evaluate a cubic Bezier at parameter u in [0, 1] (de Casteljau)."""
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"u={u} outside [0, 1]")
    p = np.asarray(control_points, dtype=np.float64).copy()
    if p.shape != (4, 3):
        raise ValueError("expected four 3D control points")
    for _ in range(3):
        p = (1.0 - u) * p[:-1] + u * p[1:]
    return p[0]


def bezier_polyline(control_points, segments):
    """Sample segments+1 points at uniform parameters; endpoints exact."""
    if segments < 1:
        raise ValueError("segments must be >= 1")
    u = np.linspace(0.0, 1.0, segments + 1)
    pts = bezier_basis(u) @ np.asarray(control_points, dtype=np.float64)
    pts[0] = control_points[0]
    pts[-1] = control_points[3]
    return pts


@dataclass
class Camera:
    """Pinhole camera: world-to-camera extrinsic plus intrinsics in pixels."""
    extrinsic: np.ndarray  # 4x4 world-to-camera, +Z forward
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.extrinsic = np.asarray(self.extrinsic, dtype=np.float64)
        if self.extrinsic.shape != (4, 4):
            raise ValueError("extrinsic must be 4x4")
        r = self.extrinsic[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or np.linalg.det(r) < 0:
            raise ValueError("extrinsic rotation block must be in SO(3)")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")

    def world_to_camera(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return pts @ self.extrinsic[:3, :3].T + self.extrinsic[:3, 3]

    def scaled(self, factor):
        """Camera for a resized image (same field of view)."""
        return Camera(self.extrinsic, self.fx * factor, self.fy * factor,
                      self.cx * factor, self.cy * factor,
                      max(1, int(round(self.width * factor))),
                      max(1, int(round(self.height * factor))))


def project(camera, point):
    """Project one world point; returns ((x, y) pixels, camera-space depth)."""
    cam = camera.world_to_camera(point)[0]
    z = cam[2]
    if z <= 0:
        raise BehindCameraError(f"point at depth {z} is behind the camera")
    return (np.array([camera.fx * cam[0] / z + camera.cx,
                      camera.fy * cam[1] / z + camera.cy]), z)


def project_points(camera, points):
    """Vectorized projection of (N, 3) points -> ((N, 2) pixels, (N,) depths).

    Raises BehindCameraError if any depth is <= 0.
    """
    cam = camera.world_to_camera(points)
    z = cam[:, 2]
    if np.any(z <= 0):
        raise BehindCameraError("point(s) behind the camera")
    xy = np.stack([camera.fx * cam[:, 0] / z + camera.cx,
                   camera.fy * cam[:, 1] / z + camera.cy], axis=1)
    return xy, z


def project_points_ad(camera, points):
    """Differentiable projection: accepts autodiff Vars as well as ndarrays.

    `points` has shape (N, 3); returns ((N, 2) pixels, (N,) depths) in the
    same representation.  Depth positivity is checked on the values.
    """
    from . import autodiff as ad
    r = camera.extrinsic[:3, :3]
    t = camera.extrinsic[:3, 3]
    cam = ad.matmul(points, r.T) + t
    z = cam[:, 2]
    if np.any(ad.value_of(z) <= 0):
        raise BehindCameraError("point(s) behind the camera")
    x = camera.fx * cam[:, 0] / z + camera.cx
    y = camera.fy * cam[:, 1] / z + camera.cy
    return ad.stack([x, y], axis=-1), z


def project_curve(camera, control_points):
    """Project the four control points; treat the result as a planar cubic."""
    xy, _ = project_points(camera, control_points)
    return xy


def quat_canonicalize(q):
    """Unit quaternion with w >= 0; for w == 0 the first nonzero of xyz is >= 0."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0:
        raise ValueError("zero quaternion")
    q = q / n
    for c in q:
        if c > 0:
            return q
        if c < 0:
            return -q
    return q


def quat_to_matrix(q):
    """Rotation matrix of a (w, x, y, z) quaternion (normalized internally)."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0:
        raise ValueError("zero quaternion")
    w, x, y, z = q / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


@dataclass
class RigidAlignment:
    """Least-squares rigid map src -> dst: rotation quaternion + translation."""
    rotation: np.ndarray  # (4,) canonical unit quaternion (w, x, y, z)
    translation: np.ndarray  # (3,)
    rms_residual: float

    def matrix(self):
        return quat_to_matrix(self.rotation)

    def apply(self, points):
        return np.atleast_2d(points) @ self.matrix().T + self.translation


def horn_align(src, dst):
    """Closed-form rigid alignment (quaternion eigen formulation).

    Finds (R, T) minimizing sum ||R src_i + T - dst_i||^2 over index-paired
    points.  Requires >= 3 non-collinear correspondences.
    """
    src = np.atleast_2d(np.asarray(src, dtype=np.float64))
    dst = np.atleast_2d(np.asarray(dst, dtype=np.float64))
    if src.shape != dst.shape:
        raise AlignmentError("point sets differ in size")
    if src.shape[0] < 3:
        raise AlignmentError("need at least 3 correspondences")
    c_src = src.mean(axis=0)
    c_dst = dst.mean(axis=0)
    a = src - c_src
    b = dst - c_dst
    # collinearity check on the source cloud
    if np.linalg.matrix_rank(a, tol=1e-12) < 2:
        raise AlignmentError("degenerate (collinear) source configuration")
    m = a.T @ b  # cross-covariance
    sxx, sxy, sxz = m[0]
    syx, syy, syz = m[1]
    szx, szy, szz = m[2]
    k = np.array([
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ])
    eigvals, eigvecs = np.linalg.eigh(k)
    q = quat_canonicalize(eigvecs[:, -1])
    rot = quat_to_matrix(q)
    t = c_dst - rot @ c_src
    res = src @ rot.T + t - dst
    rms = float(np.sqrt(np.mean(np.sum(res * res, axis=1))))
    return RigidAlignment(q, t, rms)


def farthest_point_sampling(points, n, seed=0):
    """Greedy maximin subset selection; returns indices.

    The first index is drawn uniformly from `seed`; each later pick maximizes
    the distance to the selected set, ties broken by smallest index.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    m = points.shape[0]
    if m == 0 or not 1 <= n <= m:
        raise ValueError(f"cannot sample {n} of {m} points")
    rng = np.random.default_rng(seed)
    first = int(rng.integers(m))
    chosen = [first]
    dist = np.linalg.norm(points - points[first], axis=1)
    for _ in range(n - 1):
        nxt = int(np.argmax(dist))  # argmax returns the smallest tied index
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return chosen


def outlier_filter(points, k=10, z=2.0):
    """Drop points whose mean k-NN distance exceeds mean + z * std of that stat.

    Order is preserved.  Inputs with <= k + 1 points are returned unchanged.
    """
    if k < 1 or z <= 0:
        raise ValueError("need k >= 1 and z > 0")
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[0] <= k + 1:
        return points.copy()
    tree = cKDTree(points)
    dists, _ = tree.query(points, k=k + 1)  # first neighbor is the point itself
    mean_knn = dists[:, 1:].mean(axis=1)
    cutoff = mean_knn.mean() + z * mean_knn.std()
    return points[mean_knn <= cutoff].copy()
