"""Projection and alpha-compositing of Gaussian scenes.

The image is sampled at integer pixel coordinates: pixel (ix, iy) sits at
continuous position (ix, iy). Per pixel, payloads composite front to back

    sum_i payload_i * a_i(p) * prod_{j<i} (1 - a_j(p)),
    a_i(p) = alpha_i * exp(-0.5 * d^T inv(cov2d_i) * d),

over Gaussians sorted by camera-space depth (ties by scene index), with
a_i(p) = 0 beyond the 3-sigma ellipse of the regularized 2D covariance.
The truncation is part of the compositing model: the tile renderer and the
brute-force oracle apply it identically, so binning by 3-sigma boxes loses
nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import get_backend
from .types import Camera, FeatureMap, Gaussian, GaussianScene, ValidationError, \
    covariance_from_rs_batch

NEAR_PLANE = 0.01
GUARD_BAND = 1.3  # culling keeps footprints within 1.3x the image extent
COV2D_REG = 0.3  # pixel^2, added to the diagonal before inversion
TILE = 16
EARLY_STOP_T = 1e-4
BRUTE_FORCE_LIMIT = 256

CULLED = None  # result of projecting a Gaussian that does not reach the image


@dataclass
class ProjectedGaussian:
    """Screen-space footprint of one Gaussian."""

    index: int
    uv: np.ndarray  # (2,) pixels
    depth: float  # camera-space z, world units
    cov2d: np.ndarray  # (2, 2) regularized, pixel^2
    alpha: float


@dataclass
class RenderOutput:
    payload: FeatureMap
    alpha_accum: np.ndarray  # (H, W) in [0, 1]


@dataclass
class Projection:
    """Vectorized projection of a whole scene (pre-cull data retained)."""

    valid: np.ndarray  # (N,) bool, survives near-plane + guard-band culling
    uv: np.ndarray  # (N, 2)
    depth: np.ndarray  # (N,)
    cov2d: np.ndarray  # (N, 3) packed (a, b, c), regularized
    radius: np.ndarray  # (N, 2) 3-sigma half-extent along x and y


def project_scene(scene: GaussianScene, cam: Camera, *, near=NEAR_PLANE,
                  guard=GUARD_BAND) -> Projection:
    """Project every Gaussian; `valid` marks the ones that survive culling."""
    n = len(scene)
    if n == 0:
        return Projection(valid=np.zeros(0, bool), uv=np.zeros((0, 2)),
                          depth=np.zeros(0), cov2d=np.zeros((0, 3)),
                          radius=np.zeros((0, 2)))
    pc = scene.positions @ cam.R.T + cam.t
    z = pc[:, 2]
    in_front = z > near
    zs = np.where(in_front, z, 1.0)  # placeholder to keep divisions finite
    u = cam.fx * pc[:, 0] / zs + cam.cx
    v = cam.fy * pc[:, 1] / zs + cam.cy

    cov3 = covariance_from_rs_batch(scene.rotations, scene.scales)
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = cam.fx / zs
    J[:, 0, 2] = -cam.fx * pc[:, 0] / (zs * zs)
    J[:, 1, 1] = cam.fy / zs
    J[:, 1, 2] = -cam.fy * pc[:, 1] / (zs * zs)
    M = J @ cam.R  # (N, 2, 3)
    cov2 = np.einsum("nij,njk,nlk->nil", M, cov3, M)
    a = cov2[:, 0, 0] + COV2D_REG
    b = cov2[:, 0, 1]
    c = cov2[:, 1, 1] + COV2D_REG

    rx = 3.0 * np.sqrt(a)
    ry = 3.0 * np.sqrt(c)
    margin_x = (guard - 1.0) / 2.0 * cam.width
    margin_y = (guard - 1.0) / 2.0 * cam.height
    in_guard = ((u + rx >= -margin_x) & (u - rx <= cam.width + margin_x)
                & (v + ry >= -margin_y) & (v - ry <= cam.height + margin_y))
    return Projection(valid=in_front & in_guard,
                      uv=np.stack([u, v], axis=1), depth=z,
                      cov2d=np.stack([a, b, c], axis=1),
                      radius=np.stack([rx, ry], axis=1))


def project_gaussian(g: Gaussian, cam: Camera):
    """Project one Gaussian; returns CULLED (None) if it misses the view."""
    scene = GaussianScene.from_gaussians([g])
    proj = project_scene(scene, cam)
    if not proj.valid[0]:
        return CULLED
    a, b, c = proj.cov2d[0]
    return ProjectedGaussian(index=0, uv=proj.uv[0], depth=float(proj.depth[0]),
                             cov2d=np.array([[a, b], [b, c]]),
                             alpha=float(scene.opacities[0]))


def _conic(cov2d: np.ndarray) -> np.ndarray:
    """Invert packed (a, b, c) 2x2 covariances."""
    a, b, c = cov2d[:, 0], cov2d[:, 1], cov2d[:, 2]
    det = a * c - b * b
    return np.stack([c / det, -b / det, a / det], axis=1)


def depth_order(proj: Projection) -> np.ndarray:
    """Indices of surviving Gaussians, depth-ascending, ties by index."""
    idx = np.nonzero(proj.valid)[0]
    return idx[np.argsort(proj.depth[idx], kind="stable")]


@dataclass
class RenderPlan:
    """Culled + depth-sorted + tile-binned scene for one camera.

    Reusable across payloads because geometry is frozen: feature training
    renders and backpropagates many times through one plan. `bbox` holds
    each footprint's inclusive integer pixel rectangle (x0, x1, y0, y1);
    pixels outside it are provably outside the 3-sigma ellipse.
    """

    width: int
    height: int
    ids: np.ndarray  # (M,) scene indices in composite order
    uv: np.ndarray  # (M, 2)
    conic: np.ndarray  # (M, 3) inverse covariance packed (a, b, c)
    alpha: np.ndarray  # (M,)
    bbox: np.ndarray  # (M, 4) int64 pixel rect, inclusive
    tile_starts: np.ndarray  # (T+1,) int64 CSR offsets
    tile_items: np.ndarray  # (P,) int64 ranks into the (M,) arrays
    tiles_x: int


def build_plan(scene: GaussianScene, cam: Camera) -> RenderPlan:
    proj = project_scene(scene, cam)
    order = depth_order(proj)
    uv = np.ascontiguousarray(proj.uv[order])
    conic = np.ascontiguousarray(_conic(proj.cov2d[order]))
    alpha = np.ascontiguousarray(scene.opacities[order])
    radius = proj.radius[order]

    tiles_x = (cam.width + TILE - 1) // TILE
    tiles_y = (cam.height + TILE - 1) // TILE
    n_tiles = tiles_x * tiles_y
    m = order.shape[0]

    def empty_plan(bbox):
        return RenderPlan(cam.width, cam.height, order, uv, conic, alpha, bbox,
                          np.zeros(n_tiles + 1, np.int64),
                          np.zeros(0, np.int64), tiles_x)

    if m == 0:
        return empty_plan(np.zeros((0, 4), np.int64))

    px0 = np.maximum(np.ceil(uv[:, 0] - radius[:, 0]), 0).astype(np.int64)
    px1 = np.minimum(np.floor(uv[:, 0] + radius[:, 0]), cam.width - 1).astype(np.int64)
    py0 = np.maximum(np.ceil(uv[:, 1] - radius[:, 1]), 0).astype(np.int64)
    py1 = np.minimum(np.floor(uv[:, 1] + radius[:, 1]), cam.height - 1).astype(np.int64)
    bbox = np.ascontiguousarray(np.stack([px0, px1, py0, py1], axis=1))

    covers = (px0 <= px1) & (py0 <= py1)
    tx0, tx1 = px0 // TILE, px1 // TILE
    ty0, ty1 = py0 // TILE, py1 // TILE
    counts = np.where(covers, (tx1 - tx0 + 1) * (ty1 - ty0 + 1), 0)
    total = int(counts.sum())
    if total == 0:
        return empty_plan(bbox)

    # Expand each footprint rectangle into (rank, tile) pairs, vectorized.
    ranks = np.repeat(np.arange(m, dtype=np.int64), counts)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    within = np.arange(total, dtype=np.int64) - np.repeat(starts, counts)
    ntx_r = np.repeat(tx1 - tx0 + 1, counts)
    tiles = (np.repeat(ty0, counts) + within // ntx_r) * tiles_x \
        + np.repeat(tx0, counts) + within % ntx_r
    # Stable sort by tile keeps ranks depth-ordered within each tile.
    order2 = np.argsort(tiles, kind="stable")
    tile_items = np.ascontiguousarray(ranks[order2])
    tile_starts = np.searchsorted(tiles[order2], np.arange(n_tiles + 1)).astype(np.int64)
    return RenderPlan(cam.width, cam.height, order, uv, conic, alpha, bbox,
                      tile_starts, tile_items, tiles_x)


def payload_matrix(scene: GaussianScene, selector="color", *, selection=None) -> np.ndarray:
    """Per-Gaussian payload rows for a selector.

    Selectors: "color" (C=3), "affinity" (C=feature_dim), "constant" (C=1),
    "selection" (C=1 indicator over `selection` indices), or a raw (N, C)
    array.
    """
    if isinstance(selector, np.ndarray):
        if selector.ndim != 2 or selector.shape[0] != len(scene):
            raise ValidationError(f"payload array must be (N, C), got {selector.shape}")
        return np.ascontiguousarray(selector, dtype=np.float64)
    if selector == "color":
        return scene.colors
    if selector == "affinity":
        return scene.affinities
    if selector == "constant":
        return np.ones((len(scene), 1))
    if selector == "selection":
        if selection is None:
            raise ValidationError("selection payload needs an index set")
        out = np.zeros((len(scene), 1))
        out[np.asarray(list(selection), dtype=np.int64)] = 1.0
        return out
    raise ValidationError(f"unknown payload selector {selector!r}")


def render_arrays(plan: RenderPlan, payload: np.ndarray, *, backend=None,
                  tmin=EARLY_STOP_T):
    """Composite a global (N, C) payload through a plan; float64 outputs."""
    kern = get_backend(backend)
    rows = np.ascontiguousarray(payload[plan.ids], dtype=np.float64)
    out = np.zeros((plan.height, plan.width, rows.shape[1]))
    alpha_out = np.zeros((plan.height, plan.width))
    kern.composite_forward(plan.tile_starts, plan.tile_items, plan.uv,
                           plan.conic, plan.alpha, plan.bbox, rows, out,
                           alpha_out, TILE, plan.tiles_x, tmin)
    return out, alpha_out


def render_payload_grad(plan: RenderPlan, upstream: np.ndarray, n_total: int,
                        *, backend=None, tmin=EARLY_STOP_T) -> np.ndarray:
    """Gradient of sum(upstream * rendered) w.r.t. the (N, C) payload."""
    kern = get_backend(backend)
    upstream = np.ascontiguousarray(upstream, dtype=np.float64)
    grad_rows = np.zeros((plan.ids.shape[0], upstream.shape[2]))
    kern.composite_backward(plan.tile_starts, plan.tile_items, plan.uv,
                            plan.conic, plan.alpha, plan.bbox, upstream,
                            grad_rows, TILE, plan.tiles_x, tmin)
    grad = np.zeros((n_total, upstream.shape[2]))
    grad[plan.ids] = grad_rows
    return grad


def render_payload(scene: GaussianScene, cam: Camera, payload_selector="color",
                   *, selection=None, backend=None, tmin=EARLY_STOP_T) -> RenderOutput:
    """Tile-based render of the selected payload (see module docstring)."""
    plan = build_plan(scene, cam)
    rows = payload_matrix(scene, payload_selector, selection=selection)
    out, alpha_out = render_arrays(plan, rows, backend=backend, tmin=tmin)
    return RenderOutput(payload=FeatureMap(out.astype(np.float32)),
                        alpha_accum=alpha_out)


def brute_force_render(scene: GaussianScene, cam: Camera, payload_selector="color",
                       *, selection=None, limit=BRUTE_FORCE_LIMIT) -> RenderOutput:
    """Reference compositor: per pixel over all Gaussians, no tiling, no
    early termination. Guarded by a scene-size limit."""
    if len(scene) > limit:
        raise ValidationError(f"brute-force renderer capped at {limit} Gaussians")
    rows = payload_matrix(scene, payload_selector, selection=selection)
    proj = project_scene(scene, cam)
    order = depth_order(proj)
    h, w = cam.height, cam.width
    xs = np.arange(w, dtype=np.float64)[None, :]
    ys = np.arange(h, dtype=np.float64)[:, None]
    out = np.zeros((h, w, rows.shape[1]))
    trans = np.ones((h, w))
    conic = _conic(proj.cov2d)
    for g in order:
        dx = xs - proj.uv[g, 0]
        dy = ys - proj.uv[g, 1]
        m2 = conic[g, 0] * dx * dx + 2.0 * conic[g, 1] * dx * dy \
            + conic[g, 2] * dy * dy
        al = np.where(m2 <= 9.0, scene.opacities[g] * np.exp(-0.5 * m2), 0.0)
        out += (al * trans)[:, :, None] * rows[g]
        trans = trans * (1.0 - al)
    return RenderOutput(payload=FeatureMap(out.astype(np.float32)),
                        alpha_accum=1.0 - trans)


def center_depth_map(scene: GaussianScene, cam: Camera, *, near=NEAR_PLANE) -> FeatureMap:
    """Min camera-space depth of Gaussian centers per pixel (C=1).

    Pixels no center lands on are filled with the maximum covered depth
    (0.0 when nothing is covered at all), so empty regions read as far
    background rather than infinities.
    """
    if len(scene) == 0:
        return FeatureMap(np.zeros((cam.height, cam.width, 1), np.float32))
    pc = scene.positions @ cam.R.T + cam.t
    z = pc[:, 2]
    front = z > near
    zs = np.where(front, z, 1.0)
    ix = np.rint(cam.fx * pc[:, 0] / zs + cam.cx).astype(np.int64)
    iy = np.rint(cam.fy * pc[:, 1] / zs + cam.cy).astype(np.int64)
    ok = front & (ix >= 0) & (ix < cam.width) & (iy >= 0) & (iy < cam.height)
    dm = np.full((cam.height, cam.width), np.inf)
    np.minimum.at(dm, (iy[ok], ix[ok]), z[ok])
    covered = np.isfinite(dm)
    fill = dm[covered].max() if covered.any() else 0.0
    dm[~covered] = fill
    return FeatureMap(dm[:, :, None].astype(np.float32))
