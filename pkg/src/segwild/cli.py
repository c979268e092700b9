"""Command-line surface: thin wrappers over the library operations.

Exit codes: 0 success, 1 runtime error, 2 usage error. `--json` makes
stdout machine-parseable where a subcommand reports values.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, evalbench, sceneio
from .features import TrainConfig, affinity_pca_colors, train_feature_field, \
    write_loss_trace
from .render import center_depth_map, render_payload
from .sasm import generate_prompt_points, plan_prompt_collection, \
    render_prompt_overlay
from .sceneio import FileFormatError
from .segmenter import PromptSet, SegmentationResult, segment
from .sgc import apply_sgc
from .types import ValidationError


def _emit(args, payload: dict, human: str):
    print(json.dumps(payload) if args.json else human)


def cmd_synth(args) -> int:
    if args.spec:
        with open(args.spec) as fh:
            spec = evalbench.SyntheticSpec.from_dict(json.load(fh))
        spec.rng_seed = args.seed if args.seed is not None else spec.rng_seed
    else:
        spec = evalbench.SyntheticSpec(rng_seed=args.seed or 0)
    manifest = evalbench.write_synthetic_dataset(spec, args.out)
    _emit(args, {"out": str(args.out), "manifest": str(manifest)},
          f"wrote synthetic dataset to {args.out}")
    return 0


def cmd_train_features(args) -> int:
    data_dir = Path(args.data)
    scene = sceneio.load_scene(args.scene or data_dir / "scene.ply")
    views = evalbench.load_views(data_dir)
    if views and views[0][1].channels != scene.feature_dim:
        # high-dimensional teacher maps: compress once via PCA fitted on
        # pixels subsampled across all views
        from .features import compress_feature_map, fit_teacher_pca, save_pca
        model = fit_teacher_pca([teacher for _, teacher, _ in views],
                                out_dim=scene.feature_dim,
                                rng_seed=args.seed)
        views = [(cam, compress_feature_map(model, teacher), bank)
                 for cam, teacher, bank in views]
        if args.pca_out:
            save_pca(model, args.pca_out)
    cfg = TrainConfig(iterations=args.iterations, learning_rate=args.lr,
                      lambda_fe=args.lambda_fe, lambda_com=args.lambda_com,
                      pairs_per_iter=args.pairs, rng_seed=args.seed)
    trained, trace = train_feature_field(scene, views, cfg)
    sceneio.save_scene(trained, args.out)
    if args.trace:
        write_loss_trace(trace, args.trace)
    final = trace[-1].total if trace else None
    _emit(args, {"out": str(args.out), "iterations": cfg.iterations,
                 "final_loss": final},
          f"trained {cfg.iterations} iterations -> {args.out}"
          + (f" (final loss {final:.6f})" if final is not None else ""))
    return 0


def cmd_prompts(args) -> int:
    scene = sceneio.load_scene(args.scene)
    sky = sceneio.load_mask_png(args.sky) if args.sky else None
    if args.cameras:
        cams = [sceneio.load_camera(p) for p in args.cameras]
        skies = [sky] * len(cams) if sky is not None else None
        maps = plan_prompt_collection(scene, cams, skies, npp_max=args.npp_max)
        want = Path(args.camera).resolve()
        target = next((i for i, p in enumerate(args.cameras)
                       if Path(p).resolve() == want), None)
        if target is None:
            raise ValidationError("--camera must be one of --cameras")
        ppm = maps[target]
    else:
        cam = sceneio.load_camera(args.camera)
        ppm = generate_prompt_points(scene, cam, sky, npp_max=args.npp_max)
    ppm.save(args.out)
    if args.overlay:
        cam = sceneio.load_camera(args.camera)
        base = render_payload(scene, cam, "color").payload.data
        sceneio.save_color_png(render_prompt_overlay(base, ppm), args.overlay)
    _emit(args, {"out": str(args.out), "seg_scale": ppm.seg_scale,
                 "n_points": len(ppm.points)},
          f"{len(ppm.points)} prompt points at scale {ppm.seg_scale} -> {args.out}")
    return 0


def cmd_render(args) -> int:
    scene = sceneio.load_scene(args.scene)
    cam = sceneio.load_camera(args.camera)
    out = Path(args.out)
    if args.mode == "depth":
        dm = center_depth_map(scene, cam)
        if out.suffix == ".fmap":
            sceneio.save_feature_map(dm, out)
        else:
            d = dm.data[:, :, 0].astype(np.float64)
            span = max(d.max() - d.min(), 1e-12)
            gray = (d - d.min()) / span
            sceneio.save_color_png(np.repeat(gray[:, :, None], 3, axis=2), out)
    else:
        from .types import FeatureMap
        if args.mode == "color":
            result = render_payload(scene, cam, "color")
            img, fmap = result.payload.data, result.payload
        elif args.mode == "feature_pca":
            result = render_payload(scene, cam, affinity_pca_colors(scene))
            img, fmap = result.payload.data, result.payload
        else:  # alpha
            result = render_payload(scene, cam, "constant")
            img = np.repeat(result.alpha_accum[:, :, None], 3, axis=2)
            fmap = FeatureMap(result.alpha_accum[:, :, None].astype(np.float32))
        if out.suffix == ".fmap":
            sceneio.save_feature_map(fmap, out)
        else:
            sceneio.save_color_png(img, out)
    _emit(args, {"out": str(out), "mode": args.mode}, f"rendered {args.mode} -> {out}")
    return 0


def _parse_click(text: str):
    u, v = text.split(",")
    return (float(u), float(v))


def cmd_segment(args) -> int:
    scene = sceneio.load_scene(args.scene)
    cam = sceneio.load_camera(args.camera)
    mask = sceneio.load_mask_png(args.mask) if args.mask else None
    prompts = PromptSet(view=cam, points=[_parse_click(c) for c in args.click],
                        mask_2d=mask).validate()
    result = segment(scene, prompts, args.tau)
    out_scene = scene.subset(result.selected)
    if args.sgc:
        out_scene, records = apply_sgc(scene, result, prompts)
        result.cut_records = records
    if args.out:
        result.save(args.out)
    if args.mask_out:
        pred = evalbench.mask_from_scene(out_scene, cam)
        sceneio.save_mask_png(pred, args.mask_out)
    if args.export:
        sceneio.save_scene(out_scene, args.export)
    _emit(args, {"n_selected": int(len(result.selected)), "tau": args.tau,
                 "out": args.out},
          f"selected {len(result.selected)} Gaussians at tau={args.tau}")
    return 0


def cmd_sgc(args) -> int:
    scene = sceneio.load_scene(args.scene)
    cam = sceneio.load_camera(args.camera)
    mask = sceneio.load_mask_png(args.mask)
    with open(args.result) as fh:
        loaded = json.load(fh)
    result = SegmentationResult(selected=np.asarray(loaded["indices"], np.int64),
                                s_fus=np.zeros(0), tau=loaded.get("tau", 0.5))
    # The cutter only consumes the view and mask; the click is a placeholder.
    prompts = PromptSet(view=cam, points=[(0.0, 0.0)], mask_2d=mask)
    sub, records = apply_sgc(scene, result, prompts)
    sceneio.save_scene(sub, args.out_scene)
    if args.records:
        with open(args.records, "w") as fh:
            json.dump([{"index": r.index, "coverage": r.coverage,
                        "action": r.action,
                        "new_center": [float(v) for v in r.new_center],
                        "new_scale": [float(v) for v in r.new_scale]}
                       for r in records], fh, indent=2)
            fh.write("\n")
    n_cut = sum(1 for r in records if r.action == "cut")
    n_drop = sum(1 for r in records if r.action == "drop")
    _emit(args, {"n_cut": n_cut, "n_dropped": n_drop, "out": str(args.out_scene)},
          f"cut {n_cut}, dropped {n_drop} -> {args.out_scene}")
    return 0


def cmd_eval(args) -> int:
    report = evalbench.run_benchmark(args.manifest, scene_override=args.scene)
    evalbench.save_report(report, json_path=args.out, csv_path=args.csv)
    if args.json:
        print(json.dumps(report))
    else:
        for case in report["cases"]:
            print(f"{case['name']}: IoU {case['iou_mean']:.4f} "
                  f"Acc {case['acc_mean']:.4f} ({case['runtime_s']:.2f}s)")
        if report["mean_iou"] is not None:
            print(f"mean IoU {report['mean_iou']:.4f} mean Acc {report['mean_acc']:.4f}")
        else:
            print("no cases")
    return 0


def cmd_serve(args) -> int:
    import os

    import uvicorn

    from .service import create_app

    # precedence: explicit flag > config file > SEGWILD_DATA_ROOT env > default
    cfg = {}
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)

    def pick(flag_value, key, fallback):
        if flag_value is not None:
            return flag_value
        return cfg.get(key, fallback)

    data_root = pick(args.data_root, "data_root",
                     os.environ.get("SEGWILD_DATA_ROOT", "."))
    app = create_app(
        data_root=data_root,
        frontend_dir=pick(args.frontend, "frontend", None),
        render_deadline_s=float(pick(None, "render_deadline_s", 30.0)),
        tau_default=float(pick(None, "tau_default", 0.5)),
    )
    uvicorn.run(app, host=pick(args.host, "host", "127.0.0.1"),
                port=int(pick(args.port, "port", 8000)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segwild",
                                     description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a deterministic synthetic dataset")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--spec", help="SyntheticSpec JSON file")
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-features", help="train the affinity feature field")
    p.add_argument("--data", required=True, help="dataset directory (synth layout)")
    p.add_argument("--scene", help="scene PLY (defaults to <data>/scene.ply)")
    p.add_argument("--out", required=True, help="trained scene PLY")
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--lr", type=float, default=7.5e-3)
    p.add_argument("--lambda-fe", type=float, default=0.7)
    p.add_argument("--lambda-com", type=float, default=0.3)
    p.add_argument("--pairs", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", help="loss trace CSV path")
    p.add_argument("--pca-out", help="save the teacher-compression PCA "
                   "model (PCAM) when teacher maps need compressing")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_train_features)

    p = sub.add_parser("prompts", help="plan depth-adaptive prompt points")
    p.add_argument("--scene", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--cameras", nargs="*", help="collection for scale bounds "
                   "(must include --camera)")
    p.add_argument("--sky", help="sky mask PNG")
    p.add_argument("--npp-max", type=int, default=20)
    p.add_argument("--out", required=True, help="prompt map JSON")
    p.add_argument("--overlay", help="debug overlay PNG")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_prompts)

    p = sub.add_parser("render", help="render a scene payload")
    p.add_argument("--scene", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--mode", default="color",
                   choices=["color", "feature_pca", "depth", "alpha"])
    p.add_argument("--out", required=True, help=".png or .fmap")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("segment", help="select Gaussians from prompt clicks")
    p.add_argument("--scene", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--click", action="append", required=True,
                   metavar="U,V", help="prompt pixel, repeatable")
    p.add_argument("--mask", help="2D mask PNG for gating")
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--sgc", action="store_true", help="apply the spiky cutter")
    p.add_argument("--out", help="result JSON")
    p.add_argument("--mask-out", help="rendered prediction mask PNG")
    p.add_argument("--export", help="selected sub-scene PLY")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("sgc", help="apply the spiky cutter to a saved result")
    p.add_argument("--scene", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--result", required=True, help="segmentation result JSON")
    p.add_argument("--out-scene", required=True)
    p.add_argument("--records", help="cut records JSON")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_sgc)

    p = sub.add_parser("eval", help="run a benchmark manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scene", help="override the manifest scene path")
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--csv", help="report CSV path")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--data-root", default=None,
                   help="defaults to $SEGWILD_DATA_ROOT or .")
    p.add_argument("--frontend", help="static frontend directory")
    p.add_argument("--config", help="JSON config file (host, port, "
                   "data_root, render_deadline_s, tau_default, frontend)")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, FileFormatError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
