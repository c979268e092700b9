"""Pure-numpy fallback kernels.

Semantics contract shared with `accelerated`:
  - splats are truncated at squared Mahalanobis distance 9 (the 3-sigma
    ellipse of the regularized 2D covariance); outside it alpha is 0,
  - per pixel, Gaussians composite front to back in list order,
  - a pixel stops compositing once its transmittance drops below `tmin`
    (the Gaussian that crossed the threshold is still included).

Arithmetic expressions are written identically in both backends; outputs
agree to the last ulp or so (numpy's vectorized exp may round differently
than scalar libm exp). This implementation vectorizes whole tiles and
ignores the per-item bbox hint; skipped pixels would be outside the
ellipse anyway, so results are unchanged.
"""

import numpy as np

CUTOFF_SQ = 9.0


def composite_forward(tile_starts, tile_items, uv, conic, alpha, bbox,
                      payload, out, alpha_out, tile, tiles_x, tmin):
    """Tile-ordered alpha compositing into preallocated (H, W, C) `out`."""
    height, width, _ = out.shape
    n_tiles = tile_starts.shape[0] - 1
    for ti in range(n_tiles):
        lo, hi = tile_starts[ti], tile_starts[ti + 1]
        if hi == lo:
            continue
        ty, tx = divmod(ti, tiles_x)
        x0, y0 = tx * tile, ty * tile
        x1, y1 = min(x0 + tile, width), min(y0 + tile, height)
        xs = np.arange(x0, x1, dtype=np.float64)[None, :]
        ys = np.arange(y0, y1, dtype=np.float64)[:, None]
        trans = np.ones((y1 - y0, x1 - x0))
        block = out[y0:y1, x0:x1]
        for g in tile_items[lo:hi]:
            active = trans >= tmin
            if not active.any():
                break
            dx = xs - uv[g, 0]
            dy = ys - uv[g, 1]
            m2 = conic[g, 0] * dx * dx + 2.0 * conic[g, 1] * dx * dy \
                + conic[g, 2] * dy * dy
            al = np.where((m2 <= CUTOFF_SQ) & active,
                          alpha[g] * np.exp(-0.5 * m2), 0.0)
            block += (al * trans)[:, :, None] * payload[g]
            trans = np.where(active, trans * (1.0 - al), trans)
        alpha_out[y0:y1, x0:x1] = 1.0 - trans


def composite_backward(tile_starts, tile_items, uv, conic, alpha, bbox,
                       upstream, grad_out, tile, tiles_x, tmin):
    """Accumulate d(loss)/d(payload[g]) = sum_p upstream[p] * w_g(p).

    Re-walks the forward pass to recover the per-pixel weights. Tiles are
    processed in index order so the reduction order is deterministic.
    """
    height, width, _ = upstream.shape
    n_tiles = tile_starts.shape[0] - 1
    for ti in range(n_tiles):
        lo, hi = tile_starts[ti], tile_starts[ti + 1]
        if hi == lo:
            continue
        ty, tx = divmod(ti, tiles_x)
        x0, y0 = tx * tile, ty * tile
        x1, y1 = min(x0 + tile, width), min(y0 + tile, height)
        xs = np.arange(x0, x1, dtype=np.float64)[None, :]
        ys = np.arange(y0, y1, dtype=np.float64)[:, None]
        trans = np.ones((y1 - y0, x1 - x0))
        up = upstream[y0:y1, x0:x1]
        for g in tile_items[lo:hi]:
            active = trans >= tmin
            if not active.any():
                break
            dx = xs - uv[g, 0]
            dy = ys - uv[g, 1]
            m2 = conic[g, 0] * dx * dx + 2.0 * conic[g, 1] * dx * dy \
                + conic[g, 2] * dy * dy
            al = np.where((m2 <= CUTOFF_SQ) & active,
                          alpha[g] * np.exp(-0.5 * m2), 0.0)
            w = al * trans
            grad_out[g] += np.einsum("hw,hwc->c", w, up)
            trans = np.where(active, trans * (1.0 - al), trans)
