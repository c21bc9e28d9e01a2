"""Abstraction of object motion in posed video as deformable 3D Bezier strokes.

Two stages: fit a dynamic point-cloud motion field to the frames, then
optimize canonical strokes plus per-stroke rigid transforms and
control-point deltas so their rendered projections match the video.
"""

from .geometry import (Camera, RigidAlignment, bezier_point, bezier_polyline,
                       farthest_point_sampling, horn_align, outlier_filter,
                       project, project_curve, quat_canonicalize, quat_to_matrix)
from .nn import EncoderConfig, Mlp, adam_step, mlp_forward, mlp_init, positional_encode
from .autodiff import GradTape, Var, grad_check
from .raster import SplatConfig, StrokeRasterConfig, guidance_image, \
    raster_strokes, splat_points
from .perceptual import EmbeddingBackend, ImageDistanceBackend, RobustParams, \
    cosine_distance, global_embedding, image_distance, robust_rho
from .guidance import GuidanceConfig, GuidanceModel, TimeSample, deform_points, \
    guidance_frame_loss, guidance_temporal_loss, load_guidance, rigid_loss, \
    save_guidance, train_guidance
from .sketch import SketchConfig, SketchModel, SuppressionParams, init_strokes, \
    load_sketch, save_sketch, sketch_at, suppress, train_sketch
from .evalkit import PointCloudSequence, SynthSceneSpec, chamfer, \
    generate_synthetic_scene, motion_velocity_distance, static_drift
from .scene_io import SceneManifest, export_animation, export_svg, import_dnerf, \
    load_animation, load_image, load_manifest, save_manifest, save_png

__version__ = "0.1.0"
