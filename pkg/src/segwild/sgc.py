"""Spiky-Gaussian cutting: shrink and recenter selected Gaussians whose
projected long axis leaves the 2D mask.

For each selected Gaussian the screen-space principal axis (3-sigma long
axis of the projected covariance) is sampled against the mask; a coverage
ratio r below the cut threshold shrinks all three scale axes to r * scale
and shifts the projected center by (1 - r) * sqrt(lambda_max) along the
principal direction, oriented toward the better-covered half of the axis.
The new 3D center is the back-projection of the shifted point at the
original camera-space depth. Gaussians almost entirely outside the mask
are dropped instead of shrunk to degeneracy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .render import CULLED, project_gaussian
from .segmenter import PromptSet, SegmentationResult
from .types import Camera, GaussianScene, ValidationError

N_AXIS_SAMPLES = 64
R_DROP = 0.05


@dataclass
class AxisSegment:
    """Projected long axis: endpoints at center +- (3/2) sqrt(lambda) v."""

    uv1: np.ndarray  # (2,)
    uv2: np.ndarray  # (2,)
    lambda_max: float  # pixel^2
    v_max: np.ndarray  # (2,) unit


@dataclass
class CutRecord:
    index: int
    coverage: float  # r in [0, 1]
    new_center: np.ndarray  # (3,)
    new_scale: np.ndarray  # (3,)
    action: str = "keep"  # keep | cut | drop


def principal_axis(cov2d: np.ndarray, uv: np.ndarray) -> AxisSegment:
    """Closed-form dominant eigenpair of a 2x2 SPD covariance.

    Isotropic input resolves the eigenvector tie to (1, 0).
    """
    cov2d = np.asarray(cov2d, dtype=np.float64)
    a, b, c = cov2d[0, 0], cov2d[0, 1], cov2d[1, 1]
    if abs(cov2d[1, 0] - b) > 1e-9 * max(1.0, abs(b)):
        raise ValidationError("covariance must be symmetric")
    det = a * c - b * b
    if a <= 0 or c <= 0 or det <= 0:
        raise ValidationError("covariance must be positive-definite")
    mid = 0.5 * (a + c)
    disc = np.sqrt(max(0.25 * (a - c) ** 2 + b * b, 0.0))
    lam = mid + disc
    if disc <= 1e-12 * mid:  # isotropic tie
        v = np.array([1.0, 0.0])
    elif abs(b) > 1e-300:
        v = np.array([b, lam - a])
        v = v / np.linalg.norm(v)
    else:
        v = np.array([1.0, 0.0]) if a >= c else np.array([0.0, 1.0])
    uv = np.asarray(uv, dtype=np.float64)
    half = 1.5 * np.sqrt(lam)
    return AxisSegment(uv1=uv + half * v, uv2=uv - half * v,
                       lambda_max=float(lam), v_max=v)


def _axis_samples(axis: AxisSegment, n_samples: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n_samples)[:, None]
    return axis.uv1 * (1.0 - t) + axis.uv2 * t


def _mask_hits(points: np.ndarray, mask: np.ndarray) -> np.ndarray:
    h, w = mask.shape
    ix = np.rint(points[:, 0]).astype(np.int64)
    iy = np.rint(points[:, 1]).astype(np.int64)
    ok = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    hits = np.zeros(points.shape[0], dtype=bool)
    hits[ok] = mask[iy[ok], ix[ok]]
    return hits


def coverage_ratio(axis: AxisSegment, mask: np.ndarray,
                   n_samples: int = N_AXIS_SAMPLES) -> float:
    """Fraction of evenly spaced axis samples landing on mask pixels.

    Samples include both endpoints; samples outside the image count as
    misses.
    """
    if n_samples < 2:
        raise ValidationError("coverage needs at least 2 samples")
    hits = _mask_hits(_axis_samples(axis, n_samples), np.asarray(mask, bool))
    return float(np.count_nonzero(hits)) / n_samples


def _oriented_direction(axis: AxisSegment, mask: np.ndarray,
                        n_samples: int) -> np.ndarray:
    """v_max signed toward the better-covered half of the axis."""
    pts = _axis_samples(axis, n_samples)
    hits = _mask_hits(pts, np.asarray(mask, bool))
    half = n_samples // 2
    toward_uv1 = int(np.count_nonzero(hits[:half]))
    toward_uv2 = int(np.count_nonzero(hits[n_samples - half:]))
    return axis.v_max if toward_uv1 >= toward_uv2 else -axis.v_max


def backproject(uv: np.ndarray, depth: float, cam: Camera) -> np.ndarray:
    """Invert the pinhole projection at a fixed camera-space depth."""
    x = (uv[0] - cam.cx) * depth / cam.fx
    y = (uv[1] - cam.cy) * depth / cam.fy
    return cam.R.T @ (np.array([x, y, depth]) - cam.t)


def cut_gaussian(scene: GaussianScene, index: int, axis: AxisSegment,
                 r: float, cam: Camera, *, direction=None) -> CutRecord:
    """Shrink scales to r * scale and recenter along the principal axis.

    `direction` is the signed v_max (defaults to axis.v_max); r = 1 is an
    exact identity.
    """
    if not (0.0 <= r <= 1.0):
        raise ValidationError(f"coverage ratio {r} outside [0, 1]")
    if r == 1.0:
        return CutRecord(index=index, coverage=1.0,
                         new_center=scene.positions[index].copy(),
                         new_scale=scene.scales[index].copy(), action="keep")
    v = axis.v_max if direction is None else direction
    uv = 0.5 * (axis.uv1 + axis.uv2)
    uv_new = uv + (1.0 - r) * np.sqrt(axis.lambda_max) * v
    depth = float((scene.positions[index] @ cam.R.T + cam.t)[2])
    if depth <= 0:
        raise ValidationError("cannot cut a Gaussian behind the camera")
    return CutRecord(index=index, coverage=float(r),
                     new_center=backproject(uv_new, depth, cam),
                     new_scale=r * scene.scales[index], action="cut")


def apply_sgc(scene: GaussianScene, result: SegmentationResult,
              prompts: PromptSet, *, n_samples: int = N_AXIS_SAMPLES,
              r_drop: float = R_DROP):
    """Cut every selected Gaussian against the prompt mask.

    Returns (sub-scene of the selected Gaussians with cuts applied, list of
    CutRecord). Gaussians with r >= 1 - 1/n_samples are kept unchanged;
    r < r_drop drops the Gaussian from the sub-scene.
    """
    if prompts.mask_2d is None:
        raise ValidationError("SGC needs the prompt set's 2D mask")
    mask = prompts.mask_2d
    cam = prompts.view
    cut_threshold = 1.0 - 1.0 / n_samples

    records = []
    keep_rows = []
    sub = scene.subset(result.selected)
    for row, index in enumerate(result.selected):
        proj = project_gaussian(scene.gaussian(int(index)), cam)
        if proj is CULLED:
            records.append(CutRecord(index=int(index), coverage=1.0,
                                     new_center=scene.positions[index].copy(),
                                     new_scale=scene.scales[index].copy(),
                                     action="keep"))
            keep_rows.append(row)
            continue
        axis = principal_axis(proj.cov2d, proj.uv)
        r = coverage_ratio(axis, mask, n_samples)
        if r >= cut_threshold:
            records.append(CutRecord(index=int(index), coverage=r,
                                     new_center=scene.positions[index].copy(),
                                     new_scale=scene.scales[index].copy(),
                                     action="keep"))
            keep_rows.append(row)
            continue
        if r < r_drop:
            records.append(CutRecord(index=int(index), coverage=r,
                                     new_center=scene.positions[index].copy(),
                                     new_scale=np.zeros(3), action="drop"))
            continue
        direction = _oriented_direction(axis, mask, n_samples)
        rec = cut_gaussian(scene, int(index), axis, r, cam, direction=direction)
        sub.positions[row] = rec.new_center
        sub.scales[row] = rec.new_scale
        records.append(rec)
        keep_rows.append(row)
    return sub.subset(keep_rows), records
