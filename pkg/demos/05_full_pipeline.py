"""
Stage 2: full pipeline to animated strokes
==========================================

Train guidance then the stroke sketch on a small scene, render the result
as PNG and SVG, and export the stroke animation.
"""

import tempfile
from pathlib import Path

import numpy as np

from motionsketch import SynthSceneSpec, generate_synthetic_scene
from motionsketch import guidance as gd
from motionsketch import sketch as sk
from motionsketch.geometry import project_curve
from motionsketch.perceptual import EmbeddingBackend, ImageDistanceBackend
from motionsketch.scene_io import export_animation, export_svg, save_png

out = Path(tempfile.mkdtemp()) / "scene"
spec = SynthSceneSpec("rigid_rotor", stroke_count=3, frame_count=4,
                      view_count=4, image_size=64, seed=0)
manifest, _, _ = generate_synthetic_scene(spec, out)
dist_b = ImageDistanceBackend("pyramid_gradient")
emb_b = EmbeddingBackend()

gcfg = gd.desk_profile(point_count=300, iterations=100, seed=0)
gmodel = gd.train_guidance(manifest, gcfg, dist_b)

scfg = sk.desk_sketch_profile(stroke_count=4, coarse_iterations=60,
                              fine_iterations=40)
smodel = sk.train_sketch(manifest, gmodel, scfg, dist_b, emb_b)

# render every timestep from the first camera and export the animation
cam = manifest.frames[0].camera
times = manifest.times()
stroke_frames = [np.asarray(sk.sketch_at(smodel, t)) for t in times]
for k, (t, cps) in enumerate(zip(times, stroke_frames)):
    img = sk.render_sketch(smodel, cam, t)
    save_png(np.asarray(img), out / f"sketch_{k:03d}.png")
    curves = [project_curve(cam, cp) for cp in cps]
    export_svg(curves, cam.width, cam.height, out / f"sketch_{k:03d}.svg")
export_animation(stroke_frames, times, out / "animation.json")
print("rendered", len(times), "timesteps to", out)
