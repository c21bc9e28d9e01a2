"""Command-line entry point wiring the two-stage pipeline.

Progress goes to stderr; only machine-readable results (metric lines,
written paths) go to stdout.  Exit codes: 0 success, 1 validation error,
2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import evalkit, guidance, scene_io, sketch
from .perceptual import EmbeddingBackend, ImageDistanceBackend
from .raster import StrokeRasterConfig
from .sketch import render_sketch, sketch_at
from .geometry import project_curve

log = logging.getLogger("motionsketch")


def _backend_from_name(name, feature_dir=None):
    if name == "external":
        return ImageDistanceBackend("external_features", feature_dir=feature_dir)
    return ImageDistanceBackend(name)


def _write_run_config(out_dir, args):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = {k: (str(v) if isinstance(v, Path) else v)
                for k, v in vars(args).items() if k != "func"}
    (out_dir / "run_config.json").write_text(json.dumps(resolved, indent=1))


def _load_config_file(path):
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def cmd_synth(args):
    spec = evalkit.SynthSceneSpec(args.preset, args.strokes, args.frames,
                                  args.views, args.size, args.seed)
    _write_run_config(args.out, args)
    evalkit.generate_synthetic_scene(spec, args.out)
    print(str(Path(args.out) / "manifest.json"))
    return 0


def cmd_guide(args):
    manifest = scene_io.load_manifest(args.manifest)
    file_cfg = _load_config_file(args.config)
    cfg = guidance.desk_profile() if args.profile == "desk" else guidance.GuidanceConfig()
    for k, v in file_cfg.get("guidance", {}).items():
        setattr(cfg, k, v)
    cfg.point_count = args.points
    cfg.iterations = args.iters
    cfg.seed = args.seed
    backend = _backend_from_name(args.backend, args.feature_dir)
    out = Path(args.out)
    _write_run_config(out.parent, args)
    model = guidance.train_guidance(manifest, cfg, backend)
    guidance.save_guidance(model, out)
    print(str(out))
    return 0


def cmd_sketch(args):
    manifest = scene_io.load_manifest(args.manifest)
    gmodel = guidance.load_guidance(args.guidance)
    file_cfg = _load_config_file(args.config)
    cfg = sketch.desk_sketch_profile() if args.profile == "desk" else sketch.SketchConfig()
    for k, v in file_cfg.get("sketch", {}).items():
        setattr(cfg, k, v)
    cfg.stroke_count = args.strokes
    if args.coarse_iters is not None:
        cfg.coarse_iterations = args.coarse_iters
    if args.fine_iters is not None:
        cfg.fine_iterations = args.fine_iters
    cfg.seed = args.seed
    dist_backend = _backend_from_name(args.backend, args.feature_dir)
    embed_backend = EmbeddingBackend()
    out = Path(args.out)
    _write_run_config(out.parent, args)
    model = sketch.train_sketch(manifest, gmodel, cfg, dist_backend, embed_backend)
    sketch.save_sketch(model, out)
    print(str(out))
    return 0


def cmd_render(args):
    model = sketch.load_sketch(args.sketch)
    manifest = scene_io.load_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_run_config(out_dir, args)
    times = sorted({f.t for f in manifest.frames}) if args.all else [args.t]
    cameras = {}
    for f in manifest.frames:
        cameras.setdefault(f.t, []).append(f.camera)
    any_cam = manifest.frames[0].camera
    for i, t in enumerate(times):
        cams = cameras.get(t, [any_cam])
        cam = cams[min(args.view, len(cams) - 1)]
        strokes3d = np.asarray(sketch_at(model, t))
        if args.png:
            img = render_sketch(model, cam, t)
            path = out_dir / f"sketch_{i:03d}.png"
            scene_io.save_png(np.asarray(img), path)
            print(str(path))
        if args.svg:
            curves = [project_curve(cam, cp) for cp in strokes3d]
            path = out_dir / f"sketch_{i:03d}.svg"
            scene_io.export_svg(curves, cam.width, cam.height, path,
                                stroke_width=StrokeRasterConfig().stroke_width)
            print(str(path))
    anim_path = out_dir / "animation.json"
    scene_io.export_animation([np.asarray(sketch_at(model, t)) for t in times],
                              times, anim_path)
    print(str(anim_path))
    return 0


def cmd_eval(args):
    if args.metric == "chamfer":
        a = scene_io.load_ply(args.pred)
        b = scene_io.load_ply(args.gt)
        print(f"chamfer {evalkit.chamfer(a, b):.6f}")
    elif args.metric == "velocity":
        pf, pt, _ = scene_io.load_animation(args.pred)
        gf, gt_times, _ = scene_io.load_animation(args.gt)
        pred = evalkit.gt_point_clouds(pf, pt)
        gt = evalkit.gt_point_clouds(gf, gt_times)
        print(f"velocity {evalkit.motion_velocity_distance(pred, gt):.6f}")
    else:  # drift
        model = sketch.load_sketch(args.pred)
        times = [i / 4 for i in range(5)]
        print(f"drift {evalkit.static_drift(model, times):.6f}")
    return 0


def cmd_import_dnerf(args):
    manifest = scene_io.import_dnerf(args.transforms, args.images)
    scene_io.save_manifest(manifest, args.out)
    print(str(args.out))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="motionsketch",
                                description="Abstract video motion as deformable 3D strokes.")
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap (also via L3S_THREADS)")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synth", help="generate a synthetic ground-truth scene")
    ps.add_argument("--preset", required=True, choices=evalkit.PRESETS)
    ps.add_argument("--frames", type=int, default=16)
    ps.add_argument("--views", type=int, default=20)
    ps.add_argument("--size", type=int, default=128)
    ps.add_argument("--strokes", type=int, default=6)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--out", required=True)
    ps.set_defaults(func=cmd_synth)

    pg = sub.add_parser("guide", help="train the motion guidance field")
    pg.add_argument("--manifest", required=True)
    pg.add_argument("--out", required=True)
    pg.add_argument("--points", type=int, default=10000)
    pg.add_argument("--iters", type=int, default=2000)
    pg.add_argument("--backend", default="pyramid_gradient",
                    choices=["pixel_robust", "pyramid_gradient", "external"])
    pg.add_argument("--feature-dir", default=None)
    pg.add_argument("--seed", type=int, default=0)
    pg.add_argument("--profile", default="desk", choices=["desk", "full"])
    pg.add_argument("--config", default=None, help="JSON config file; flags win")
    pg.set_defaults(func=cmd_guide)

    pk = sub.add_parser("sketch", help="fit strokes to the guidance and frames")
    pk.add_argument("--manifest", required=True)
    pk.add_argument("--guidance", required=True)
    pk.add_argument("--strokes", type=int, default=16)
    pk.add_argument("--out", required=True)
    pk.add_argument("--coarse-iters", type=int, default=None)
    pk.add_argument("--fine-iters", type=int, default=None)
    pk.add_argument("--backend", default="pyramid_gradient",
                    choices=["pixel_robust", "pyramid_gradient", "external"])
    pk.add_argument("--feature-dir", default=None)
    pk.add_argument("--seed", type=int, default=0)
    pk.add_argument("--profile", default="desk", choices=["desk", "full"])
    pk.add_argument("--config", default=None)
    pk.set_defaults(func=cmd_sketch)

    pr = sub.add_parser("render", help="export sketch frames from a checkpoint")
    pr.add_argument("--sketch", required=True)
    pr.add_argument("--manifest", required=True)
    pr.add_argument("--t", type=float, default=0.0)
    pr.add_argument("--all", action="store_true")
    pr.add_argument("--view", type=int, default=0)
    pr.add_argument("--svg", action="store_true")
    pr.add_argument("--png", action="store_true")
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_render)

    pe = sub.add_parser("eval", help="print one metric line to stdout")
    pe.add_argument("metric", choices=["chamfer", "velocity", "drift"])
    pe.add_argument("--pred", required=True)
    pe.add_argument("--gt", default=None)
    pe.set_defaults(func=cmd_eval)

    pi = sub.add_parser("import-dnerf", help="convert a D-NeRF style dataset")
    pi.add_argument("--transforms", required=True)
    pi.add_argument("--images", required=True)
    pi.add_argument("--out", required=True)
    pi.set_defaults(func=cmd_import_dnerf)
    return p


def main(argv=None):
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    try:
        return args.func(args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 2
    except (ValueError, scene_io.ManifestError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
