"""Numba-accelerated kernels; see `reference` for the semantics contract.

The forward pass parallelizes over tiles; every tile writes a disjoint
image region, and within a tile Gaussians are walked in depth order with
per-pixel transmittance state, so outputs are bit-identical for any thread
count. Iteration is item-outer over each footprint's pixel bbox: pixels
outside the bbox are outside the 3-sigma ellipse, so skipping them leaves
the per-pixel operation sequence unchanged.
"""

import numpy as np
from numba import njit, prange

CUTOFF_SQ = 9.0


@njit(cache=True, parallel=True)
def composite_forward(tile_starts, tile_items, uv, conic, alpha, bbox,
                      payload, out, alpha_out, tile, tiles_x, tmin):
    height, width, channels = out.shape
    n_tiles = tile_starts.shape[0] - 1
    for ti in prange(n_tiles):
        ty = ti // tiles_x
        tx = ti - ty * tiles_x
        x0 = tx * tile
        y0 = ty * tile
        x1 = min(x0 + tile, width)
        y1 = min(y0 + tile, height)
        trans = np.ones((y1 - y0, x1 - x0))
        for k in range(tile_starts[ti], tile_starts[ti + 1]):
            g = tile_items[k]
            gx0 = max(x0, bbox[g, 0])
            gx1 = min(x1 - 1, bbox[g, 1])
            gy0 = max(y0, bbox[g, 2])
            gy1 = min(y1 - 1, bbox[g, 3])
            ca = conic[g, 0]
            cb = conic[g, 1]
            cc = conic[g, 2]
            ux = uv[g, 0]
            vy = uv[g, 1]
            a_g = alpha[g]
            for py in range(gy0, gy1 + 1):
                dy = py - vy
                for px in range(gx0, gx1 + 1):
                    t = trans[py - y0, px - x0]
                    if t < tmin:
                        continue
                    dx = px - ux
                    m2 = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
                    if m2 > CUTOFF_SQ:
                        continue
                    al = a_g * np.exp(-0.5 * m2)
                    w = al * t
                    for c in range(channels):
                        out[py, px, c] += w * payload[g, c]
                    trans[py - y0, px - x0] = t * (1.0 - al)
        for py in range(y0, y1):
            for px in range(x0, x1):
                alpha_out[py, px] = 1.0 - trans[py - y0, px - x0]


@njit(cache=True)
def composite_backward(tile_starts, tile_items, uv, conic, alpha, bbox,
                       upstream, grad_out, tile, tiles_x, tmin):
    height, width, channels = upstream.shape
    n_tiles = tile_starts.shape[0] - 1
    for ti in range(n_tiles):
        ty = ti // tiles_x
        tx = ti - ty * tiles_x
        x0 = tx * tile
        y0 = ty * tile
        x1 = min(x0 + tile, width)
        y1 = min(y0 + tile, height)
        trans = np.ones((y1 - y0, x1 - x0))
        for k in range(tile_starts[ti], tile_starts[ti + 1]):
            g = tile_items[k]
            gx0 = max(x0, bbox[g, 0])
            gx1 = min(x1 - 1, bbox[g, 1])
            gy0 = max(y0, bbox[g, 2])
            gy1 = min(y1 - 1, bbox[g, 3])
            ca = conic[g, 0]
            cb = conic[g, 1]
            cc = conic[g, 2]
            ux = uv[g, 0]
            vy = uv[g, 1]
            a_g = alpha[g]
            for py in range(gy0, gy1 + 1):
                dy = py - vy
                for px in range(gx0, gx1 + 1):
                    t = trans[py - y0, px - x0]
                    if t < tmin:
                        continue
                    dx = px - ux
                    m2 = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
                    if m2 > CUTOFF_SQ:
                        continue
                    al = a_g * np.exp(-0.5 * m2)
                    w = al * t
                    for c in range(channels):
                        grad_out[g, c] += w * upstream[py, px, c]
                    trans[py - y0, px - x0] = t * (1.0 - al)
