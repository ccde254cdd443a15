"""Pure numpy / interpreted kernel backend.

Broadcast-friendly kernels get vectorized rewrites; the inherently
sequential ones (Dijkstra, ray marching) run the shared loop bodies
interpreted. Semantics match the numba backend exactly.
"""
import numpy as np

from ._loops import (  # noqa: F401  (re-exported loop fallbacks)
    aggregate_cells,
    bin_points,
    classify_cells,
    clear_dynamic_cells,
    count_ray_crossings,
    grid_dijkstra,
    los_grid,
    los_grid_many,
    table_lookup,
    update_seen,
)

NAME = "numpy"


def raycast(ox, oy, bearings, segs, max_range):
    n = bearings.shape[0]
    if segs.shape[0] == 0:
        return np.full(n, np.inf)
    dx = np.cos(bearings)[:, None]
    dy = np.sin(bearings)[:, None]
    x0 = segs[None, :, 0]
    y0 = segs[None, :, 1]
    ex = segs[None, :, 2] - x0
    ey = segs[None, :, 3] - y0
    den = dx * ey - dy * ex
    sx = x0 - ox
    sy = y0 - oy
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (sx * ey - sy * ex) / den
        u = (sx * dy - sy * dx) / den
    valid = (np.abs(den) >= 1e-12) & (t >= 0.0) & (u >= -1e-12) & (u <= 1.0 + 1e-12)
    t = np.where(valid, t, np.inf)
    best = t.min(axis=1)
    return np.where(best <= max_range, best, np.inf)


def segments_block(cands, segs, tol):
    k = cands.shape[0]
    if segs.shape[0] == 0 or k == 0:
        return np.zeros(k, dtype=np.uint8)
    ax = cands[:, 0][:, None]
    ay = cands[:, 1][:, None]
    bx = cands[:, 2][:, None]
    by = cands[:, 3][:, None]
    cx = segs[None, :, 0]
    cy = segs[None, :, 1]
    dx_ = segs[None, :, 2]
    dy_ = segs[None, :, 3]
    shared = (
        ((np.abs(ax - cx) < tol) & (np.abs(ay - cy) < tol))
        | ((np.abs(ax - dx_) < tol) & (np.abs(ay - dy_) < tol))
        | ((np.abs(bx - cx) < tol) & (np.abs(by - cy) < tol))
        | ((np.abs(bx - dx_) < tol) & (np.abs(by - dy_) < tol))
    )
    d1 = (dx_ - cx) * (ay - cy) - (dy_ - cy) * (ax - cx)
    d2 = (dx_ - cx) * (by - cy) - (dy_ - cy) * (bx - cx)
    d3 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    d4 = (bx - ax) * (dy_ - ay) - (by - ay) * (dx_ - ax)
    cross = (
        ((d1 > 1e-12) & (d2 < -1e-12) | (d1 < -1e-12) & (d2 > 1e-12))
        & ((d3 > 1e-12) & (d4 < -1e-12) | (d3 < -1e-12) & (d4 > 1e-12))
        & ~shared
    )
    return cross.any(axis=1).astype(np.uint8)
