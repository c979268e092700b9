"""Benchmarking: mask metrics, a deterministic synthetic-scene generator,
and a manifest-driven end-to-end runner.

Predicted 3D segmentations are evaluated by rendering the selected subset
into each ground-truth view and thresholding accumulated alpha at 0.5,
then comparing against the ground-truth bitmaps with IoU and pixel
accuracy.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import sceneio
from .render import build_plan, render_arrays
from .segmenter import PromptSet, SegmentationResult, segment
from .sgc import apply_sgc
from .types import Camera, FeatureMap, GaussianScene, MaskBank, ValidationError

ALPHA_CUT = 0.5


# ---------------------------------------------------------------------------
# Metrics


def _check_masks(pred, gt):
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValidationError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def iou(pred, gt) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    pred, gt = _check_masks(pred, gt)
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


def acc(pred, gt) -> float:
    """Pixelwise accuracy over the full image."""
    pred, gt = _check_masks(pred, gt)
    return np.count_nonzero(pred == gt) / pred.size


def mask_from_scene(scene: GaussianScene, cam: Camera, alpha_cut=ALPHA_CUT,
                    *, backend=None) -> np.ndarray:
    """Accumulated-alpha footprint of a whole scene, thresholded."""
    plan = build_plan(scene, cam)
    _, alpha = render_arrays(plan, np.ones((len(scene), 1)), backend=backend)
    return alpha > alpha_cut


def segmentation_to_mask(scene: GaussianScene, result: SegmentationResult,
                         cam: Camera, alpha_cut=ALPHA_CUT, *,
                         backend=None) -> np.ndarray:
    """Render the selected subset alone and threshold its alpha."""
    return mask_from_scene(scene.subset(result.selected), cam, alpha_cut,
                           backend=backend)


# ---------------------------------------------------------------------------
# Synthetic scenes


@dataclass
class ClusterSpec:
    center: tuple
    spread: float
    count: int
    label: str


@dataclass
class SyntheticSpec:
    # Defaults give a well-conditioned training problem: footprints small
    # enough that every Gaussian dominates some pixels in some view, so the
    # L1 sign gradients carry an individual signal.
    rng_seed: int = 0
    clusters: list = field(default_factory=lambda: [
        ClusterSpec(center=(-1.2, 0.0, 0.0), spread=0.45, count=30, label="left"),
        ClusterSpec(center=(1.2, 0.0, 0.0), spread=0.45, count=30, label="right"),
    ])
    n_cameras: int = 10
    image_size: int = 96
    distance_factor: float = 3.5  # camera ring radius / cloud radius
    noise_sigma: float = 0.0
    feature_dim: int = 0  # 0 -> one channel per cluster
    opacity_range: tuple = (0.8, 0.95)
    scale_range: tuple = (0.05, 0.10)  # relative to cluster spread

    def validate(self) -> "SyntheticSpec":
        labels = [c.label for c in self.clusters]
        if len(set(labels)) != len(labels):
            raise ValidationError("cluster labels must be distinct")
        if any(c.count < 1 for c in self.clusters):
            raise ValidationError("cluster counts must be >= 1")
        if self.n_cameras < 1:
            raise ValidationError("need at least one camera")
        return self

    def to_dict(self) -> dict:
        return {"rng_seed": self.rng_seed,
                "clusters": [{"center": list(c.center), "spread": c.spread,
                              "count": c.count, "label": c.label}
                             for c in self.clusters],
                "n_cameras": self.n_cameras, "image_size": self.image_size,
                "distance_factor": self.distance_factor,
                "noise_sigma": self.noise_sigma,
                "feature_dim": self.feature_dim,
                "opacity_range": list(self.opacity_range),
                "scale_range": list(self.scale_range)}

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        clusters = [ClusterSpec(center=tuple(c["center"]), spread=c["spread"],
                                count=c["count"], label=c["label"])
                    for c in d.get("clusters", [])]
        kwargs = {k: d[k] for k in ("rng_seed", "n_cameras", "image_size",
                                    "distance_factor", "noise_sigma",
                                    "feature_dim") if k in d}
        if "opacity_range" in d:
            kwargs["opacity_range"] = tuple(d["opacity_range"])
        if "scale_range" in d:
            kwargs["scale_range"] = tuple(d["scale_range"])
        return cls(clusters=clusters or cls().clusters, **kwargs)


_PALETTE = np.array([
    [0.85, 0.25, 0.25], [0.25, 0.55, 0.85], [0.30, 0.75, 0.35],
    [0.90, 0.70, 0.20], [0.65, 0.35, 0.80], [0.30, 0.75, 0.75],
])


@dataclass
class SyntheticData:
    scene: GaussianScene  # zero-initialized affinities
    labels: np.ndarray  # (N,) cluster index per Gaussian
    label_names: list
    cameras: list
    views: list  # [(Camera, FeatureMap teacher, MaskBank)], parallel to cameras
    gt_masks: list  # per camera: (n_clusters, H, W) bool


def generate_synthetic(spec: SyntheticSpec, *, backend=None) -> SyntheticData:
    """Deterministic cluster scene with rendered one-hot teacher features
    plus per-label mask banks (doubling as ground truth)."""
    spec.validate()
    rng = np.random.default_rng(spec.rng_seed)
    n_clusters = len(spec.clusters)
    feature_dim = spec.feature_dim or n_clusters

    positions, scales, rotations, opacities, colors, labels = [], [], [], [], [], []
    for k, cl in enumerate(spec.clusters):
        positions.append(np.asarray(cl.center) + cl.spread
                         * rng.standard_normal((cl.count, 3)))
        scales.append(cl.spread * rng.uniform(*spec.scale_range, (cl.count, 3)))
        q = rng.standard_normal((cl.count, 4))
        rotations.append(q / np.linalg.norm(q, axis=1, keepdims=True))
        opacities.append(rng.uniform(*spec.opacity_range, cl.count))
        colors.append(np.tile(_PALETTE[k % len(_PALETTE)], (cl.count, 1)))
        labels.append(np.full(cl.count, k))
    scene = GaussianScene(
        positions=np.concatenate(positions),
        rotations=np.concatenate(rotations),
        scales=np.concatenate(scales),
        opacities=np.concatenate(opacities),
        colors=np.concatenate(colors),
        affinities=np.zeros((sum(c.count for c in spec.clusters), feature_dim)),
        metadata={"synthetic_seed": spec.rng_seed},
    ).validate()
    labels = np.concatenate(labels)

    centroid = scene.positions.mean(axis=0)
    cloud_radius = float(np.max(np.linalg.norm(scene.positions - centroid, axis=1)))
    dist = spec.distance_factor * cloud_radius
    size = spec.image_size
    focal = size * dist / (2.6 * cloud_radius)
    cameras = []
    for i in range(spec.n_cameras):
        theta = 2.0 * np.pi * i / spec.n_cameras
        pos = centroid + dist * np.array([np.sin(theta), 0.25, np.cos(theta)])
        cameras.append(Camera.look_at(pos, centroid, fx=focal, fy=focal,
                                      cx=size / 2, cy=size / 2,
                                      width=size, height=size))

    onehot = np.eye(n_clusters)[labels]
    if feature_dim > n_clusters:
        onehot = np.pad(onehot, ((0, 0), (0, feature_dim - n_clusters)))
    views, gt_masks = [], []
    for i, cam in enumerate(cameras):
        plan = build_plan(scene, cam)
        teacher, _ = render_arrays(plan, onehot, backend=backend)
        teacher = teacher + spec.noise_sigma * rng.standard_normal(teacher.shape)
        masks = np.stack([
            mask_from_scene(scene.subset(np.nonzero(labels == k)[0]), cam,
                            backend=backend)
            for k in range(n_clusters)])
        bank = MaskBank.build(f"view_{i:03d}", masks).validate()
        views.append((cam, FeatureMap(teacher.astype(np.float32)), bank))
        gt_masks.append(masks)
    return SyntheticData(scene=scene, labels=labels,
                         label_names=[c.label for c in spec.clusters],
                         cameras=cameras, views=views, gt_masks=gt_masks)


def pick_click_point(scene: GaussianScene, indices, cam: Camera, *,
                     backend=None) -> tuple:
    """Deterministic prompt pixel: argmax of the subset's accumulated alpha."""
    plan = build_plan(scene.subset(indices), cam)
    _, alpha = render_arrays(plan, np.ones((len(indices), 1)), backend=backend)
    flat = int(np.argmax(alpha))
    return (flat % cam.width, flat // cam.width)


def write_synthetic_dataset(spec: SyntheticSpec, out_dir, *, backend=None) -> Path:
    """Materialize a synthetic dataset + benchmark manifest on disk.

    Layout: scene.ply/.affn, labels.json, spec.json, views/view_XXX.camera
    .json + .fmap + .masks/, manifest.json. Identical spec -> identical
    tree.
    """
    data = generate_synthetic(spec, backend=backend)
    out_dir = Path(out_dir)
    views_dir = out_dir / "views"
    views_dir.mkdir(parents=True, exist_ok=True)
    sceneio.save_scene(data.scene, out_dir / "scene.ply")
    with open(out_dir / "labels.json", "w") as fh:
        json.dump({"label_names": data.label_names,
                   "labels": [int(v) for v in data.labels]}, fh)
        fh.write("\n")
    with open(out_dir / "spec.json", "w") as fh:
        json.dump(spec.to_dict(), fh, indent=2)
        fh.write("\n")

    for i, (cam, teacher, bank) in enumerate(data.views):
        stem = f"view_{i:03d}"
        sceneio.save_camera(cam, views_dir / f"{stem}.camera.json")
        sceneio.save_feature_map(teacher, views_dir / f"{stem}.fmap")
        sceneio.save_mask_bank(bank, views_dir / f"{stem}.masks")

    cases = []
    for k, name in enumerate(data.label_names):
        indices = np.nonzero(data.labels == k)[0]
        click = pick_click_point(data.scene, indices, data.cameras[0],
                                 backend=backend)
        cases.append({
            "name": name,
            "scene": "scene.ply",
            "prompt_camera": "views/view_000.camera.json",
            "prompts": [[float(click[0]), float(click[1])]],
            "mask_2d": f"views/view_000.masks/mask_{k:03d}.png",
            "tau": 0.5,
            "use_sgc": False,
            "gt": [{"camera": f"views/view_{i:03d}.camera.json",
                    "mask_png": f"views/view_{i:03d}.masks/mask_{k:03d}.png"}
                   for i in range(spec.n_cameras)],
        })
    manifest_path = out_dir / "manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump({"cases": cases}, fh, indent=2)
        fh.write("\n")
    return manifest_path


def load_views(data_dir) -> list:
    """(Camera, FeatureMap, MaskBank) triples from a dataset directory
    using the `write_synthetic_dataset` layout."""
    views_dir = Path(data_dir) / "views"
    cam_paths = sorted(views_dir.glob("*.camera.json"))
    if not cam_paths:
        raise ValidationError(f"no views found under {views_dir}")
    views = []
    for cam_path in cam_paths:
        stem = cam_path.name.replace(".camera.json", "")
        views.append((sceneio.load_camera(cam_path),
                      sceneio.load_feature_map(views_dir / f"{stem}.fmap"),
                      sceneio.load_mask_bank(views_dir / f"{stem}.masks"
                                             / "manifest.json")))
    return views


def make_straddling_demo(mask_fraction: float = 0.5, size: int = 64):
    """Tiny scene with one elongated Gaussian poking out of a half-image
    mask, plus supporting in-mask Gaussians. Returns (scene, camera, mask,
    selected_indices)."""
    cam = Camera.look_at((0, 0, -4.0), (0, 0, 0), fx=1.6 * size, fy=1.6 * size,
                         cx=size / 2, cy=size / 2, width=size, height=size)

    def world_at(u, v, depth=4.0):
        pc = np.array([(u - cam.cx) * depth / cam.fx,
                       (v - cam.cy) * depth / cam.fy, depth])
        return cam.R.T @ (pc - cam.t)

    boundary = mask_fraction * size
    # straddler center 4 px inside the mask; long axis along the image u
    # axis, which is the world direction of the camera's first rotation row
    axis_world = cam.R[0]
    q_axis = np.array([1.0, 0.0, 0.0, 0.0])  # world x; aligned with R[0] here
    assert abs(abs(axis_world @ np.array([1.0, 0, 0])) - 1.0) < 1e-9
    scene = GaussianScene(
        positions=np.stack([world_at(boundary - 4, size / 2),
                            world_at(boundary - 22, size / 2 - 10),
                            world_at(boundary - 22, size / 2 + 10)]),
        rotations=np.tile(q_axis, (3, 1)),
        scales=np.array([[0.5, 0.06, 0.06], [0.12, 0.12, 0.12],
                         [0.12, 0.12, 0.12]]),
        opacities=np.array([0.95, 0.9, 0.9]),
        colors=np.tile(_PALETTE[0], (3, 1)),
        affinities=np.ones((3, 2)) * np.array([1.0, 0.0]),
    ).validate()
    mask = np.zeros((size, size), dtype=bool)
    mask[:, :int(boundary)] = True
    return scene, cam, mask, np.arange(3)


# ---------------------------------------------------------------------------
# Benchmark runner


def run_benchmark(manifest_path, *, scene_override=None, backend=None) -> dict:
    """Run every manifest case and report per-case IoU/Acc plus means."""
    manifest_path = Path(manifest_path)
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    root = manifest_path.parent
    scene_cache: dict = {}

    def load_scene_cached(rel):
        path = Path(scene_override) if scene_override else root / rel
        key = str(path)
        if key not in scene_cache:
            scene_cache[key] = sceneio.load_scene(path)
        return scene_cache[key]

    case_reports = []
    t_total = time.perf_counter()
    for case in manifest.get("cases", []):
        t0 = time.perf_counter()
        scene = load_scene_cached(case["scene"])
        cam = sceneio.load_camera(root / case["prompt_camera"])
        mask = None
        if case.get("mask_2d"):
            mask = sceneio.load_mask_png(root / case["mask_2d"])
        prompts = PromptSet(view=cam,
                            points=[tuple(p) for p in case["prompts"]],
                            mask_2d=mask, prompt_id=case["name"]).validate()
        tau = float(case.get("tau", 0.5))
        result = segment(scene, prompts, tau, backend=backend)
        if case.get("use_sgc"):
            pred_scene, _ = apply_sgc(scene, result, prompts)
        else:
            pred_scene = scene.subset(result.selected)
        if not case.get("gt"):
            raise ValidationError(
                f"case {case['name']!r} needs at least one ground-truth view")
        per_view = []
        for gt in case["gt"]:
            gcam = sceneio.load_camera(root / gt["camera"])
            gt_mask = sceneio.load_mask_png(root / gt["mask_png"])
            pred = mask_from_scene(pred_scene, gcam, backend=backend)
            per_view.append({"iou": iou(pred, gt_mask), "acc": acc(pred, gt_mask)})
        case_reports.append({
            "name": case["name"],
            "n_selected": int(len(result.selected)),
            "iou_mean": float(np.mean([v["iou"] for v in per_view])),
            "acc_mean": float(np.mean([v["acc"] for v in per_view])),
            "per_view": per_view,
            "runtime_s": time.perf_counter() - t0,
        })
    case_reports.sort(key=lambda c: c["name"])
    report = {
        "n_cases": len(case_reports),
        "cases": case_reports,
        "mean_iou": float(np.mean([c["iou_mean"] for c in case_reports]))
        if case_reports else None,
        "mean_acc": float(np.mean([c["acc_mean"] for c in case_reports]))
        if case_reports else None,
        "total_runtime_s": time.perf_counter() - t_total,
    }
    return report


def save_report(report: dict, json_path=None, csv_path=None) -> None:
    if json_path:
        with open(json_path, "w") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["name", "iou", "acc", "n_selected", "runtime_s"])
            for case in report["cases"]:
                writer.writerow([case["name"], f"{case['iou_mean']:.6f}",
                                 f"{case['acc_mean']:.6f}", case["n_selected"],
                                 f"{case['runtime_s']:.3f}"])
