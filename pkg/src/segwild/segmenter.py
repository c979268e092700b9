"""Click-driven selection of Gaussians by rendered-feature similarity.

Each prompt pixel's rendered affinity feature is compared against every
Gaussian's affinity vector by cosine; per-prompt similarity rows are fused
with a softmax over the prompt axis (a convex combination per Gaussian),
thresholded at tau, and optionally gated by a 2D mask test at the
projected center.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .render import NEAR_PLANE, build_plan, render_arrays
from .types import Camera, GaussianScene, ValidationError

DEFAULT_TAU = 0.5
NORM_EPS = 1e-12


@dataclass
class PromptSet:
    """User prompt clicks on one view, with an optional external 2D mask."""

    view: Camera
    points: list  # [(u, v), ...] nonempty, inside the image
    mask_2d: np.ndarray | None = None  # (H, W) bool
    prompt_id: str = "prompts"

    def validate(self) -> "PromptSet":
        if not self.points:
            raise ValidationError("prompt set needs at least one point")
        for u, v in self.points:
            if not (0 <= u < self.view.width and 0 <= v < self.view.height):
                raise ValidationError(f"prompt ({u}, {v}) outside the image")
        if self.mask_2d is not None:
            self.mask_2d = np.asarray(self.mask_2d, dtype=bool)
            if self.mask_2d.shape != (self.view.height, self.view.width):
                raise ValidationError("mask dimensions do not match the view")
        return self


@dataclass
class SegmentationResult:
    selected: np.ndarray  # sorted Gaussian indices
    s_fus: np.ndarray  # (N,) fused similarity
    tau: float
    provenance: str = ""
    n_prompts: int = 0
    cut_records: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"indices": [int(i) for i in self.selected],
                "tau": self.tau,
                "prompt_view": self.provenance,
                "n_prompts": int(self.n_prompts)}

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.where(norms > NORM_EPS, x / np.where(norms > NORM_EPS, norms, 1.0), 0.0)


def prompt_similarity(scene: GaussianScene, prompts: PromptSet, *,
                      backend=None) -> np.ndarray:
    """(n_prompts, N) matrix of cosine(fe_rend at click, affinity_g)."""
    prompts.validate()
    plan = build_plan(scene, prompts.view)
    rendered, _ = render_arrays(plan, scene.affinities, backend=backend)
    feats = np.stack([rendered[int(round(v)), int(round(u))]
                      for u, v in prompts.points])
    return _unit_rows(feats) @ _unit_rows(scene.affinities).T


def fuse_similarity(s: np.ndarray) -> np.ndarray:
    """Softmax-weighted fusion over the prompt axis, per Gaussian."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] < 1:
        raise ValidationError(f"similarity matrix must be (n_prompts, N), got {s.shape}")
    e = np.exp(s - s.max(axis=0, keepdims=True))
    weights = e / e.sum(axis=0, keepdims=True)
    return np.sum(weights * s, axis=0)


def project_centers(scene: GaussianScene, cam: Camera, *, near=NEAR_PLANE):
    """Integer pixel of each center plus an in-image validity flag."""
    pc = scene.positions @ cam.R.T + cam.t
    z = pc[:, 2]
    front = z > near
    zs = np.where(front, z, 1.0)
    ix = np.rint(cam.fx * pc[:, 0] / zs + cam.cx).astype(np.int64)
    iy = np.rint(cam.fy * pc[:, 1] / zs + cam.cy).astype(np.int64)
    ok = front & (ix >= 0) & (ix < cam.width) & (iy >= 0) & (iy < cam.height)
    return ix, iy, ok


def select_gaussians(scene: GaussianScene, prompts: PromptSet, s_fus: np.ndarray,
                     tau: float = DEFAULT_TAU) -> SegmentationResult:
    """Threshold the fused similarity; with a mask, also require the
    projected center to land on a mask pixel."""
    if not (0.0 < tau < 1.0):
        raise ValidationError(f"tau must be in (0, 1), got {tau}")
    keep = s_fus > tau
    if prompts.mask_2d is not None:
        ix, iy, ok = project_centers(scene, prompts.view)
        gate = np.zeros(len(scene), dtype=bool)
        gate[ok] = prompts.mask_2d[iy[ok], ix[ok]]
        keep &= gate
    return SegmentationResult(selected=np.nonzero(keep)[0], s_fus=s_fus,
                              tau=tau, provenance=prompts.prompt_id,
                              n_prompts=len(prompts.points))


def segment(scene: GaussianScene, prompts: PromptSet, tau: float = DEFAULT_TAU,
            *, backend=None) -> SegmentationResult:
    """prompt_similarity -> fuse_similarity -> select_gaussians."""
    s = prompt_similarity(scene, prompts, backend=backend)
    return select_gaussians(scene, prompts, fuse_similarity(s), tau)
