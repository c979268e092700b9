"""Core domain types: splat scenes, cameras, feature maps, and mask banks.

Scenes are stored structure-of-arrays (float64 in memory) with activated
parameters: positive scales, opacities in [0, 1], unit quaternions. File
formats keep the conventional raw parameterization (log-scale, opacity
logit); the I/O layer applies the activations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ValidationError(ValueError):
    """An object violates one of its structural invariants."""


QUAT_TOL = 1e-6
ROT_TOL = 1e-5


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) to 3x3 rotation matrix. Batched over
    leading axes."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[..., 0, 1] = 2.0 * (x * y - z * w)
    R[..., 0, 2] = 2.0 * (x * z + y * w)
    R[..., 1, 0] = 2.0 * (x * y + z * w)
    R[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[..., 1, 2] = 2.0 * (y * z - x * w)
    R[..., 2, 0] = 2.0 * (x * z - y * w)
    R[..., 2, 1] = 2.0 * (y * z + x * w)
    R[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return R


def covariance_from_rs(q: np.ndarray, s: np.ndarray) -> np.ndarray:
    """3D covariance R S S^T R^T from a unit quaternion and positive scales.

    Raises ValidationError for a non-unit quaternion or non-positive scales.
    The result is symmetric positive-definite by construction.
    """
    q = np.asarray(q, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if abs(np.linalg.norm(q) - 1.0) > QUAT_TOL:
        raise ValidationError(f"quaternion norm {np.linalg.norm(q):.8f} not unit")
    if np.any(s <= 0):
        raise ValidationError(f"scales must be positive, got {s}")
    R = quat_to_rot(q)
    return (R * (s * s)) @ R.T


def covariance_from_rs_batch(q: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Batched R S S^T R^T; (N,4) quaternions and (N,3) scales -> (N,3,3)."""
    R = quat_to_rot(q)
    s2 = np.asarray(s, dtype=np.float64) ** 2
    return np.einsum("nij,nj,nkj->nik", R, s2, R)


@dataclass
class Gaussian:
    """Single anisotropic 3D Gaussian (a view into one scene slot)."""

    position: np.ndarray  # (3,) world units
    rotation: np.ndarray  # (4,) unit quaternion (w, x, y, z)
    scale: np.ndarray  # (3,) positive, world units
    opacity: float  # in [0, 1]
    color: np.ndarray  # (3,) RGB in [0, 1], degree-0 SH only
    affinity: np.ndarray  # (C,) unitless feature vector


@dataclass
class GaussianScene:
    """Ordered set of Gaussians, stored as parallel arrays.

    Index is identity: gaussian i keeps position i through every read-only
    operation. Scenes are treated as immutable once built; training and
    cutting produce modified copies.
    """

    positions: np.ndarray  # (N, 3)
    rotations: np.ndarray  # (N, 4) unit quaternions (w, x, y, z)
    scales: np.ndarray  # (N, 3) positive
    opacities: np.ndarray  # (N,) in [0, 1]
    colors: np.ndarray  # (N, 3) in [0, 1]
    affinities: np.ndarray  # (N, C)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float64)
        self.scales = np.ascontiguousarray(self.scales, dtype=np.float64)
        self.opacities = np.ascontiguousarray(self.opacities, dtype=np.float64)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.float64)
        self.affinities = np.ascontiguousarray(self.affinities, dtype=np.float64)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.affinities.shape[1]

    def validate(self) -> "GaussianScene":
        n = len(self)
        for name, arr, cols in (
            ("positions", self.positions, 3),
            ("rotations", self.rotations, 4),
            ("scales", self.scales, 3),
            ("colors", self.colors, 3),
        ):
            if arr.shape != (n, cols):
                raise ValidationError(f"{name} shape {arr.shape}, expected ({n}, {cols})")
        if self.opacities.shape != (n,):
            raise ValidationError(f"opacities shape {self.opacities.shape}")
        if self.affinities.ndim != 2 or self.affinities.shape[0] != n:
            raise ValidationError(f"affinities shape {self.affinities.shape}")
        for name, arr in (("positions", self.positions), ("scales", self.scales),
                          ("rotations", self.rotations), ("opacities", self.opacities),
                          ("colors", self.colors), ("affinities", self.affinities)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"non-finite values in {name}")
        if n:
            qn = np.linalg.norm(self.rotations, axis=1)
            if np.max(np.abs(qn - 1.0)) > QUAT_TOL:
                raise ValidationError("quaternions not unit within tolerance")
            if np.any(self.scales <= 0):
                raise ValidationError("non-positive scales")
            if np.any(self.opacities < 0) or np.any(self.opacities > 1):
                raise ValidationError("opacity outside [0, 1]")
            if np.any(self.colors < 0) or np.any(self.colors > 1):
                raise ValidationError("color outside [0, 1]")
        return self

    def gaussian(self, i: int) -> Gaussian:
        return Gaussian(
            position=self.positions[i],
            rotation=self.rotations[i],
            scale=self.scales[i],
            opacity=float(self.opacities[i]),
            color=self.colors[i],
            affinity=self.affinities[i],
        )

    def copy(self) -> "GaussianScene":
        return GaussianScene(
            positions=self.positions.copy(),
            rotations=self.rotations.copy(),
            scales=self.scales.copy(),
            opacities=self.opacities.copy(),
            colors=self.colors.copy(),
            affinities=self.affinities.copy(),
            metadata=dict(self.metadata),
        )

    def subset(self, indices) -> "GaussianScene":
        """New scene holding the given Gaussians, in the given order."""
        idx = np.asarray(list(indices), dtype=np.int64)
        return GaussianScene(
            positions=self.positions[idx],
            rotations=self.rotations[idx],
            scales=self.scales[idx],
            opacities=self.opacities[idx],
            colors=self.colors[idx],
            affinities=self.affinities[idx],
            metadata=dict(self.metadata),
        )

    def with_affinities(self, af: np.ndarray) -> "GaussianScene":
        out = self.copy()
        af = np.ascontiguousarray(af, dtype=np.float64)
        if af.shape[0] != len(self):
            raise ValidationError(f"affinity rows {af.shape[0]} != scene size {len(self)}")
        out.affinities = af
        return out

    @classmethod
    def from_gaussians(cls, gaussians, metadata=None) -> "GaussianScene":
        gs = list(gaussians)
        if not gs:
            return cls.empty(feature_dim=0, metadata=metadata)
        return cls(
            positions=np.stack([g.position for g in gs]),
            rotations=np.stack([g.rotation for g in gs]),
            scales=np.stack([g.scale for g in gs]),
            opacities=np.array([g.opacity for g in gs]),
            colors=np.stack([g.color for g in gs]),
            affinities=np.stack([g.affinity for g in gs]),
            metadata=metadata or {},
        )

    @classmethod
    def empty(cls, feature_dim: int = 0, metadata=None) -> "GaussianScene":
        return cls(
            positions=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            scales=np.zeros((0, 3)),
            opacities=np.zeros(0),
            colors=np.zeros((0, 3)),
            affinities=np.zeros((0, feature_dim)),
            metadata=metadata or {},
        )


@dataclass
class Camera:
    """Pinhole camera: intrinsics in pixels plus a world-to-camera pose."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    R: np.ndarray  # (3, 3) world -> camera rotation, row-major
    t: np.ndarray  # (3,) world -> camera translation

    def __post_init__(self):
        self.R = np.ascontiguousarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.ascontiguousarray(self.t, dtype=np.float64).reshape(3)
        self.width = int(self.width)
        self.height = int(self.height)

    def validate(self) -> "Camera":
        if self.width < 1 or self.height < 1:
            raise ValidationError("image dimensions must be >= 1")
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be positive")
        err = np.max(np.abs(self.R.T @ self.R - np.eye(3)))
        if err > ROT_TOL:
            raise ValidationError(f"rotation not orthonormal (error {err:.2e})")
        return self

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R.T @ self.t

    @property
    def optical_axis(self) -> np.ndarray:
        """Unit viewing direction (camera +z) in world coordinates."""
        return self.R[2].copy()

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.R.T + self.t

    @classmethod
    def look_at(cls, position, target, up=(0.0, 1.0, 0.0), *, fx, fy, cx, cy,
                width, height) -> "Camera":
        """Camera at `position` looking toward `target` (world +z forward)."""
        position = np.asarray(position, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - position
        fwd = fwd / np.linalg.norm(fwd)
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(fwd, up)
        nr = np.linalg.norm(right)
        if nr < 1e-12:  # view direction parallel to up: pick another up
            up = np.array([1.0, 0.0, 0.0])
            right = np.cross(fwd, up)
            nr = np.linalg.norm(right)
        right = right / nr
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        return cls(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height,
                   R=R, t=-R @ position).validate()


@dataclass
class FeatureMap:
    """Dense H x W x C float32 grid (teacher features, renders, depth)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValidationError(f"feature map must be (H, W, C), got {self.data.shape}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def validate(self) -> "FeatureMap":
        if self.channels < 1:
            raise ValidationError("feature map needs at least one channel")
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("non-finite values in feature map")
        return self


NO_MASK = -1


@dataclass
class MaskBank:
    """Binary masks for one image plus the per-pixel finest-mask assignment.

    pixel_assignment maps each pixel to the index of the smallest-area mask
    containing it (ties: higher confidence, then lower index) or NO_MASK.
    """

    image_id: str
    masks: np.ndarray  # (n, H, W) bool
    confidences: np.ndarray  # (n,)
    pixel_assignment: np.ndarray  # (H, W) int32, NO_MASK where uncovered

    @classmethod
    def build(cls, image_id: str, masks, confidences=None) -> "MaskBank":
        masks = np.ascontiguousarray(masks, dtype=bool)
        if masks.ndim != 3:
            raise ValidationError(f"masks must be (n, H, W), got {masks.shape}")
        n = masks.shape[0]
        if confidences is None:
            confidences = np.ones(n)
        confidences = np.asarray(confidences, dtype=np.float64)
        if confidences.shape != (n,):
            raise ValidationError("one confidence per mask required")
        assignment = np.full(masks.shape[1:], NO_MASK, dtype=np.int32)
        areas = masks.reshape(n, -1).sum(axis=1)
        # Priority: smallest area, then highest confidence, then lowest index.
        priority = sorted(range(n), key=lambda i: (areas[i], -confidences[i], i))
        for i in priority:
            assignment[masks[i] & (assignment == NO_MASK)] = i
        return cls(image_id=image_id, masks=masks, confidences=confidences,
                   pixel_assignment=assignment)

    @property
    def height(self) -> int:
        return self.masks.shape[1]

    @property
    def width(self) -> int:
        return self.masks.shape[2]

    def __len__(self) -> int:
        return self.masks.shape[0]

    def validate(self) -> "MaskBank":
        if self.pixel_assignment.shape != self.masks.shape[1:]:
            raise ValidationError("pixel_assignment shape mismatch")
        assigned = self.pixel_assignment != NO_MASK
        idx = self.pixel_assignment[assigned]
        if idx.size and (idx.min() < 0 or idx.max() >= len(self)):
            raise ValidationError("pixel assigned to invalid mask index")
        ys, xs = np.nonzero(assigned)
        if ys.size and not np.all(self.masks[self.pixel_assignment[ys, xs], ys, xs]):
            raise ValidationError("pixel assigned to a mask that does not contain it")
        return self
