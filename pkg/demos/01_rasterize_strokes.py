"""
Differentiable rasterization
============================

Render 3D Bezier strokes and Gaussian point splats through a pinhole
camera, then push a gradient back to the control points.
"""

import numpy as np

from motionsketch import GradTape, Var, raster_strokes, splat_points
from motionsketch import save_png
from motionsketch.autodiff import reduce_sum
from motionsketch.evalkit import hemisphere_cameras
from motionsketch.geometry import bezier_polyline, project_curve, project_points

rng = np.random.default_rng(0)
cam = hemisphere_cameras(4, 128)[0]

# three random strokes near the origin
strokes = rng.normal(scale=0.25, size=(3, 4, 3))

# soft stroke coverage: black strokes on white
curves2d = [project_curve(cam, cp) for cp in strokes]
img = raster_strokes(curves2d, cam.width, cam.height)
save_png(img, "demo_strokes.png")
print("stroke render range", float(img.min()), float(img.max()))

# point splatting: sample the strokes and splat with depth-scaled sigmas
pts3d = np.concatenate([bezier_polyline(cp, 32) for cp in strokes])
xy, depth = project_points(cam, pts3d)
splat = splat_points(xy, depth, cam.width, cam.height)
save_png(1.0 - splat, "demo_splat.png")

# gradients flow back to the 2D positions through the fused splat op
tape = GradTape()
xy_v = Var(xy, tape=tape)
out = splat_points(xy_v, depth, cam.width, cam.height, tape=tape)
tape.backward(reduce_sum(out * rng.normal(size=(cam.height, cam.width))))
print("grad shape", xy_v.grad.shape, "norm", float(np.linalg.norm(xy_v.grad)))
