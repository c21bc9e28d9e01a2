"""
Stage 1: motion guidance
========================

Fit a small dynamic point cloud to a synthetic scene and inspect the
training losses and the learned displacements.
"""

import tempfile
from pathlib import Path

import numpy as np

from motionsketch import SynthSceneSpec, generate_synthetic_scene
from motionsketch import guidance as gd
from motionsketch.perceptual import ImageDistanceBackend

out = Path(tempfile.mkdtemp()) / "scene"
spec = SynthSceneSpec("rigid_rotor", stroke_count=3, frame_count=4,
                      view_count=4, image_size=64, seed=0)
manifest, _, _ = generate_synthetic_scene(spec, out)

cfg = gd.desk_profile(point_count=300, iterations=120, seed=0)
backend = ImageDistanceBackend("pyramid_gradient")
losses = []
model = gd.train_guidance(manifest, cfg, backend,
                          callback=lambda it, loss, m: losses.append(loss))
print(f"loss first 10 mean {np.mean(losses[:10]):.4f} "
      f"last 10 mean {np.mean(losses[-10:]):.4f}")

# displacements over time: start of the sequence vs the end
for t in (0.0, 0.5, 1.0):
    disp = np.linalg.norm(gd.displacement(model, t), axis=1)
    print(f"t={t}: mean |displacement| {disp.mean():.4f}")

path = out / "guidance.l3sg"
gd.save_guidance(model, path)
print("checkpoint", path, path.stat().st_size, "bytes")
