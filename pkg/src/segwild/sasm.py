"""Scale-adaptive prompt planning for the external mask generator.

Per image the pipeline is: center-depth map -> sky filter -> linear depth
normalization to [0, npp_max] -> per-cell mean depth on a SegS x SegS grid
-> per-cell prompt count (floor, clamped to [1, npp_max]) -> uniform
sub-grid of count x count points inside each cell. The grid scale SegS
itself comes from the mean distance of the scene along the optical axis,
normalized over the image collection and mapped from 8 (nearest) down
to 4 (farthest).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .render import center_depth_map
from .types import Camera, FeatureMap, GaussianScene, ValidationError

SEG_SCALE_NEAR = 8  # scale at normalized distance 0
SEG_SCALE_FAR = 4  # scale at normalized distance 1
NPP_MAX_DEFAULT = 20


@dataclass
class PromptPointMap:
    image_id: str
    seg_scale: int
    points: list  # [(u, v), ...] pixel coordinates
    per_cell_counts: np.ndarray  # (SegS, SegS) int

    def to_dict(self) -> dict:
        return {"image_id": self.image_id, "seg_scale": self.seg_scale,
                "points": [[float(u), float(v)] for u, v in self.points]}

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def mean_axis_distance(scene: GaussianScene, cam: Camera) -> float:
    """Mean projection of Gaussian centers onto the camera's optical axis."""
    if len(scene) == 0:
        raise ValidationError("mean axis distance of an empty scene")
    rel = scene.positions - cam.center
    return float(np.mean(rel @ cam.optical_axis))


def segmentation_scale(d: float, d_min: float, d_max: float) -> int:
    """Grid scale in [4, 8]; 8 at the collection's nearest image, 4 at the
    farthest. Degenerate collections fall back to the midpoint 6."""
    if d_max <= d_min:
        return 6
    norm = (d - d_min) / (d_max - d_min)
    raw = int(np.floor(SEG_SCALE_NEAR + norm * (SEG_SCALE_FAR - SEG_SCALE_NEAR) + 0.5))
    return int(np.clip(raw, SEG_SCALE_FAR, SEG_SCALE_NEAR))


def sky_filter(dm: FeatureMap, sky: np.ndarray) -> FeatureMap:
    """Replace sky pixels with the image's minimum depth."""
    depth = dm.data[:, :, 0].astype(np.float64)
    sky = np.asarray(sky, dtype=bool)
    if sky.shape != depth.shape:
        raise ValidationError(f"sky mask {sky.shape} vs depth {depth.shape}")
    out = np.where(sky, depth.min(), depth)
    return FeatureMap(out[:, :, None].astype(np.float32))


def _cell_edges(size: int, cells: int) -> np.ndarray:
    """Cell boundaries; the last row/column absorbs remainder pixels."""
    if size < cells:
        raise ValidationError(f"image extent {size} smaller than grid {cells}")
    step = size // cells
    edges = np.arange(cells + 1, dtype=np.int64) * step
    edges[-1] = size
    return edges


def grid_mean_depth(dm: FeatureMap, seg_scale: int) -> np.ndarray:
    """(SegS, SegS) per-cell mean of a 1-channel depth map."""
    depth = dm.data[:, :, 0].astype(np.float64)
    h, w = depth.shape
    ye = _cell_edges(h, seg_scale)
    xe = _cell_edges(w, seg_scale)
    out = np.empty((seg_scale, seg_scale))
    for i in range(seg_scale):
        for j in range(seg_scale):
            out[i, j] = depth[ye[i]:ye[i + 1], xe[j]:xe[j + 1]].mean()
    return out


def prompt_count(cell_depth: float, npp_max: int = NPP_MAX_DEFAULT) -> int:
    """Prompt points per cell axis: floor of the normalized depth, clamped."""
    return int(min(npp_max, max(1, np.floor(cell_depth))))


def _normalize_depth(depth: np.ndarray, npp_max: int) -> np.ndarray:
    lo, hi = depth.min(), depth.max()
    if hi <= lo:
        return np.zeros_like(depth)
    return (depth - lo) / (hi - lo) * npp_max


def cell_prompt_points(u0: float, v0: float, w_c: float, h_c: float,
                       npp: int) -> list:
    """Uniform npp x npp sub-grid inside one cell: offsets (2m+1)/(2 npp)."""
    return [(u0 + (2 * m + 1) / (2 * npp) * w_c,
             v0 + (2 * n + 1) / (2 * npp) * h_c)
            for m in range(npp) for n in range(npp)]


def generate_prompt_points(scene: GaussianScene, cam: Camera, sky=None, *,
                           npp_max: int = NPP_MAX_DEFAULT, image_id: str = "",
                           d_bounds=None) -> PromptPointMap:
    """Full prompt-planning pipeline for one image.

    `d_bounds` is the (min, max) of the mean axis distance over the image
    collection; omit it for a single image (midpoint scale 6). `sky` is an
    optional H x W boolean mask of sky pixels.
    """
    d = mean_axis_distance(scene, cam)
    if d_bounds is None:
        seg_scale = 6
    else:
        seg_scale = segmentation_scale(d, d_bounds[0], d_bounds[1])

    dm = center_depth_map(scene, cam)
    if sky is not None:
        dm = sky_filter(dm, sky)
    depth = _normalize_depth(dm.data[:, :, 0].astype(np.float64), npp_max)
    cells = grid_mean_depth(FeatureMap(depth[:, :, None].astype(np.float32)),
                            seg_scale)

    ye = _cell_edges(cam.height, seg_scale)
    xe = _cell_edges(cam.width, seg_scale)
    counts = np.empty((seg_scale, seg_scale), dtype=np.int64)
    points = []
    for i in range(seg_scale):
        for j in range(seg_scale):
            npp = prompt_count(cells[i, j], npp_max)
            counts[i, j] = npp
            points.extend(cell_prompt_points(xe[j], ye[i], xe[j + 1] - xe[j],
                                             ye[i + 1] - ye[i], npp))
    return PromptPointMap(image_id=image_id, seg_scale=seg_scale,
                          points=points, per_cell_counts=counts)


def plan_prompt_collection(scene: GaussianScene, cameras, skies=None, *,
                           npp_max: int = NPP_MAX_DEFAULT, image_ids=None):
    """Prompt maps for a collection; scale bounds come from the collection."""
    cameras = list(cameras)
    if not cameras:
        return []
    dists = [mean_axis_distance(scene, cam) for cam in cameras]
    bounds = (min(dists), max(dists))
    if skies is None:
        skies = [None] * len(cameras)
    if image_ids is None:
        image_ids = [f"view_{i:03d}" for i in range(len(cameras))]
    return [generate_prompt_points(scene, cam, sky, npp_max=npp_max,
                                   image_id=iid, d_bounds=bounds)
            for cam, sky, iid in zip(cameras, skies, image_ids)]


def render_prompt_overlay(base_rgb: np.ndarray, ppm: PromptPointMap,
                          radius: int = 1) -> np.ndarray:
    """Stamp prompt points onto an (H, W, 3) image in [0, 1] for inspection."""
    img = np.array(base_rgb, dtype=np.float64, copy=True)
    h, w = img.shape[:2]
    for u, v in ppm.points:
        x, y = int(round(u)), int(round(v))
        y0, y1 = max(0, y - radius), min(h, y + radius + 1)
        x0, x1 = max(0, x - radius), min(w, x + radius + 1)
        img[y0:y1, x0:x1] = (1.0, 0.2, 0.2)
    return img
