"""Planar geometry helpers shared across the stack.

Polygons are (n, 2) float arrays, implicitly closed (last vertex connects
back to the first). CCW orientation is the canonical form everywhere.
"""
from __future__ import annotations

import numpy as np

EPS = 1e-9


def polygon_area(poly: np.ndarray) -> float:
    """Signed area; positive for CCW."""
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def ensure_ccw(poly: np.ndarray) -> np.ndarray:
    p = np.asarray(poly, dtype=float)
    if polygon_area(p) < 0:
        return p[::-1].copy()
    return p


def dedup_vertices(poly: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    keep = [0]
    for i in range(1, len(poly)):
        if np.hypot(*(poly[i] - poly[keep[-1]])) > tol:
            keep.append(i)
    # closing duplicate
    if len(keep) > 1 and np.hypot(*(poly[keep[-1]] - poly[keep[0]])) <= tol:
        keep.pop()
    return poly[keep]


def polygon_segments(poly: np.ndarray) -> np.ndarray:
    """Edge list as (n, 4) rows [x0, y0, x1, y1]."""
    nxt = np.roll(poly, -1, axis=0)
    return np.hstack([poly, nxt])


def seg_intersect(p1, p2, p3, p4, include_ends: bool = True) -> bool:
    """Segment p1p2 vs p3p4 intersection test."""
    d1 = _cross(p3, p4, p1)
    d2 = _cross(p3, p4, p2)
    d3 = _cross(p1, p2, p3)
    d4 = _cross(p1, p2, p4)
    if ((d1 > EPS and d2 < -EPS) or (d1 < -EPS and d2 > EPS)) and (
        (d3 > EPS and d4 < -EPS) or (d3 < -EPS and d4 > EPS)
    ):
        return True
    if not include_ends:
        return False
    for d, a in ((d1, p1), (d2, p2)):
        if abs(d) <= EPS and _on_segment(p3, p4, a):
            return True
    for d, a in ((d3, p3), (d4, p4)):
        if abs(d) <= EPS and _on_segment(p1, p2, a):
            return True
    return False


def _cross(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a, b, p) -> bool:
    return (
        min(a[0], b[0]) - EPS <= p[0] <= max(a[0], b[0]) + EPS
        and min(a[1], b[1]) - EPS <= p[1] <= max(a[1], b[1]) + EPS
    )


def is_simple_polygon(poly: np.ndarray) -> bool:
    """No self intersection; O(n^2), fine for world-model sizes."""
    n = len(poly)
    if n < 3:
        return False
    for i in range(n):
        a1, a2 = poly[i], poly[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            b1, b2 = poly[j], poly[(j + 1) % n]
            if seg_intersect(a1, a2, b1, b2):
                return False
    return True


def point_in_polygon(x: float, y: float, poly: np.ndarray) -> bool:
    """Even-odd rule; boundary points count as inside."""
    inside = False
    n = len(poly)
    j = n - 1
    for i in range(n):
        xi, yi = poly[i]
        xj, yj = poly[j]
        if (yi > y) != (yj > y):
            xint = (xj - xi) * (y - yi) / (yj - yi) + xi
            if x < xint:
                inside = not inside
        j = i
    if dist_point_polygon(x, y, poly) <= EPS:
        return True
    return inside


def dist_point_segment(px, py, x0, y0, x1, y1) -> float:
    dx, dy = x1 - x0, y1 - y0
    l2 = dx * dx + dy * dy
    if l2 < EPS:
        return float(np.hypot(px - x0, py - y0))
    t = max(0.0, min(1.0, ((px - x0) * dx + (py - y0) * dy) / l2))
    return float(np.hypot(px - (x0 + t * dx), py - (y0 + t * dy)))


def dist_point_polygon(px: float, py: float, poly: np.ndarray) -> float:
    """Distance to the polygon boundary."""
    n = len(poly)
    best = np.inf
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        best = min(best, dist_point_segment(px, py, x0, y0, x1, y1))
    return float(best)


def circle_overlaps_polygon(cx: float, cy: float, r: float, poly: np.ndarray) -> bool:
    if point_in_polygon(cx, cy, poly):
        return True
    return dist_point_polygon(cx, cy, poly) < r


def convex_flags(poly: np.ndarray) -> np.ndarray:
    """Per-vertex convexity for a CCW polygon (interior angle < pi)."""
    prv = np.roll(poly, 1, axis=0)
    nxt = np.roll(poly, -1, axis=0)
    v1 = poly - prv
    v2 = nxt - poly
    cross = v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0]
    return cross > EPS


def simplify_chain(points: np.ndarray, eps: float) -> np.ndarray:
    """Douglas-Peucker on an open polyline."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 3:
        return pts.copy()
    keep = np.zeros(len(pts), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(pts) - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        x0, y0 = pts[i]
        x1, y1 = pts[j]
        seg = pts[i + 1 : j]
        d = np.array(
            [dist_point_segment(p[0], p[1], x0, y0, x1, y1) for p in seg]
        )
        k = int(np.argmax(d))
        if d[k] > eps:
            keep[i + 1 + k] = True
            stack.append((i, i + 1 + k))
            stack.append((i + 1 + k, j))
    return pts[keep]


def simplify_closed(poly: np.ndarray, eps: float) -> np.ndarray:
    """Douglas-Peucker on a closed ring: split at the two farthest vertices."""
    p = np.asarray(poly, dtype=float)
    if len(p) < 4:
        return p.copy()
    i0 = 0
    d = np.hypot(p[:, 0] - p[i0, 0], p[:, 1] - p[i0, 1])
    i1 = int(np.argmax(d))
    if i1 == 0:
        return p.copy()
    a = simplify_chain(p[i0 : i1 + 1], eps)
    b = simplify_chain(np.vstack([p[i1:], p[:1]]), eps)
    out = np.vstack([a[:-1], b[:-1]])
    return dedup_vertices(out)


def inflate_polygon(poly: np.ndarray, r: float, miter_limit: float = 3.0) -> np.ndarray:
    """Grow a CCW polygon outward by r via bisector vertex offset."""
    if r <= 0:
        return poly.copy()
    prv = np.roll(poly, 1, axis=0)
    nxt = np.roll(poly, -1, axis=0)
    e_in = poly - prv
    e_out = nxt - poly
    e_in /= np.maximum(np.hypot(e_in[:, 0], e_in[:, 1]), EPS)[:, None]
    e_out /= np.maximum(np.hypot(e_out[:, 0], e_out[:, 1]), EPS)[:, None]
    # outward normals for CCW: (dy, -dx)
    n_in = np.stack([e_in[:, 1], -e_in[:, 0]], axis=1)
    n_out = np.stack([e_out[:, 1], -e_out[:, 0]], axis=1)
    bis = n_in + n_out
    norm = np.hypot(bis[:, 0], bis[:, 1])
    norm = np.maximum(norm, EPS)
    bis /= norm[:, None]
    # offset so each adjacent edge is pushed out exactly r (miter)
    cos_half = np.clip((1.0 + np.sum(n_in * n_out, axis=1)) / 2.0, 1e-4, None)
    scale = np.minimum(r / np.sqrt(cos_half), r * miter_limit)
    return poly + bis * scale[:, None]


def fill_polygon_mask(
    poly: np.ndarray, origin_x: float, origin_y: float, cell: float, h: int, w: int
) -> np.ndarray:
    """Scanline-rasterize a polygon onto a grid; cell counts if its center is inside."""
    mask = np.zeros((h, w), dtype=bool)
    ys = origin_y + (np.arange(h) + 0.5) * cell
    n = len(poly)
    for row, y in enumerate(ys):
        xs = []
        j = n - 1
        for i in range(n):
            y0, y1 = poly[i, 1], poly[j, 1]
            if (y0 > y) != (y1 > y):
                x = poly[i, 0] + (y - y0) * (poly[j, 0] - poly[i, 0]) / (y1 - y0)
                xs.append(x)
            j = i
        xs.sort()
        for k in range(0, len(xs) - 1, 2):
            c0 = int(np.ceil((xs[k] - origin_x) / cell - 0.5))
            c1 = int(np.floor((xs[k + 1] - origin_x) / cell - 0.5))
            c0 = max(c0, 0)
            c1 = min(c1, w - 1)
            if c1 >= c0:
                mask[row, c0 : c1 + 1] = True
    return mask


def trace_boundary(mask: np.ndarray) -> list[np.ndarray]:
    """Outer boundaries of solid regions in a binary grid (crack following).

    Returns one closed CCW ring per 4-connected component, in grid-corner
    coordinates (unit = one cell). Holes are not traced.
    """
    h, w = mask.shape
    # horizontal "crack" edges between solid and empty, walked with solid on the left
    visited = set()
    rings: list[np.ndarray] = []
    # directions: 0=+x, 1=+y, 2=-x, 3=-y in (x, y) corner space
    dx = [1, 0, -1, 0]
    dy = [0, 1, 0, -1]

    def solid(cx: int, cy: int) -> bool:
        return 0 <= cy < h and 0 <= cx < w and bool(mask[cy, cx])

    for y in range(h):
        for x in range(w):
            if not mask[y, x] or solid(x, y - 1):
                continue
            # bottom edge of (x, y), walking +x, solid above (left of travel)
            if (x, y, 0) in visited:
                continue
            ring = []
            cx, cy, d = x, y, 0
            while True:
                if (cx, cy, d) in visited:
                    break
                visited.add((cx, cy, d))
                ring.append((cx, cy))
                nx, ny = cx + dx[d], cy + dy[d]
                # candidate turns, prefer left turn to hug solid on the left
                for turn in (1, 0, -1, 2):
                    nd = (d + turn) % 4
                    # cell to the left of direction nd when standing at corner (nx, ny)
                    lx, ly = _left_cell(nx, ny, nd)
                    rx, ry = _right_cell(nx, ny, nd)
                    if solid(lx, ly) and not solid(rx, ry):
                        cx, cy, d = nx, ny, nd
                        break
                else:
                    break
                if (cx, cy, d) == (x, y, 0):
                    break
            if len(ring) >= 4:
                rings.append(np.array(ring, dtype=float))
    return rings


def _left_cell(cx: int, cy: int, d: int) -> tuple[int, int]:
    # cell on the left side of direction d leaving corner (cx, cy)
    if d == 0:
        return cx, cy
    if d == 1:
        return cx - 1, cy
    if d == 2:
        return cx - 1, cy - 1
    return cx, cy - 1


def _right_cell(cx: int, cy: int, d: int) -> tuple[int, int]:
    if d == 0:
        return cx, cy - 1
    if d == 1:
        return cx, cy
    if d == 2:
        return cx - 1, cy
    return cx - 1, cy - 1


def normalize_angle(a: float) -> float:
    """Wrap into (-pi, pi]."""
    a = (a + np.pi) % (2.0 * np.pi) - np.pi
    if a <= -np.pi:
        a += 2.0 * np.pi
    return float(a)


def angdiff(a: float, b: float) -> float:
    return normalize_angle(a - b)
