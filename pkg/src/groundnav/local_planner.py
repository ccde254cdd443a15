"""Motion-primitive local planner.

A library of short constant-curvature arcs, organized in heading groups, is
precomputed together with a correspondence table mapping nearby obstacle
locations to the primitives they would collide with. At runtime, obstacle
points mask collided primitives via table lookup, the best surviving group
toward the waypoint is chosen, and a command velocity is emitted.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .terrain import NON_TRAVERSABLE, TerrainSnapshot
from .world import CmdVel, Pose, VEHICLE_RADIUS
from .geometry import normalize_angle, angdiff, point_in_polygon

HEADING_SIGMA = 0.5  # rad, angular falloff of the group score

# minimum obstacle-cell clearance a corridor must offer before planners may
# route the vehicle through it. The follower's near-field logic treats
# obstacle cells closer than roughly half a meter as contact hazards (the
# collision-table band widens to ~0.53 m at the smallest retry scale), so
# corridors promising less than this leave the follower refusing the plan.
PASSABLE_CLEARANCE = 0.5

# how far past an obstacle cell's center its surface may extend; grazing
# clearance tests against cell centers must leave at least this much slack
CELL_SURFACE_MARGIN = 0.1


@dataclass(frozen=True)
class PrimitiveLibraryParams:
    horizon: float = 3.75
    groups: int = 36
    primitives_per_group: int = 7
    lateral_spread: float = 0.6
    path_step: float = 0.1
    vehicle_radius: float = VEHICLE_RADIUS
    table_cell: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.groups * self.primitives_per_group > 65535:
            raise ValueError("too many primitives for compact ids")


@dataclass(frozen=True)
class MotionPrimitive:
    id: int
    group_id: int
    poses: np.ndarray  # (k, 3) of (x, y, heading), vehicle frame
    v_ratio: float
    omega_ratio: float


@dataclass(frozen=True)
class CorrespondenceTable:
    """CSR map from local-grid cells to the primitive ids sweeping them."""

    origin: float  # lower corner of both axes (square, centered)
    cell: float
    n: int  # cells per side
    cell_start: np.ndarray  # (n*n + 1,) int64
    ids: np.ndarray  # concatenated primitive ids, sorted per cell


@dataclass(frozen=True)
class PrimitiveLibrary:
    params: PrimitiveLibraryParams
    primitives: list
    group_headings: np.ndarray  # (groups,)
    group_of: np.ndarray  # (n_prims,) int32
    rank_in_group: np.ndarray  # (n_prims,) 0 = most central
    v_ratios: np.ndarray
    omega_ratios: np.ndarray

    @property
    def n(self) -> int:
        return len(self.primitives)


@dataclass(frozen=True)
class WaypointCmd:
    waypoint: tuple
    nav_boundary: np.ndarray | None = None
    speed_limit: float = CmdVel.V_MAX
    is_final: bool = False
    fallback: bool = False  # set when no path point was line-of-sight

    def __post_init__(self):
        if not (0 < self.speed_limit <= CmdVel.V_MAX):
            raise ValueError("speed_limit out of range")


def _arc_poses(pre_heading: float, curvature: float, length: float, step: float):
    """Turn in place to pre_heading, then follow a constant-curvature arc."""
    k = int(np.ceil(length / step))
    poses = [(0.0, 0.0, 0.0)]
    if abs(pre_heading) > 1e-12:
        poses.append((0.0, 0.0, pre_heading))
    for i in range(1, k + 1):
        s = min(i * step, length)
        if abs(curvature) < 1e-9:
            x, y, h = s, 0.0, 0.0
        else:
            h = curvature * s
            x = np.sin(h) / curvature
            y = (1.0 - np.cos(h)) / curvature
        c, sn = np.cos(pre_heading), np.sin(pre_heading)
        poses.append((c * x - sn * y, sn * x + c * y, normalize_angle(pre_heading + h)))
    return np.array(poses)


def build_library(params: PrimitiveLibraryParams | None = None):
    """Deterministic primitive fan + exact swept-disc correspondence table."""
    p = params or PrimitiveLibraryParams()
    rng = np.random.default_rng(p.rng_seed)
    primitives = []
    group_headings = np.array(
        [normalize_angle(2 * np.pi * g / p.groups) for g in range(p.groups)]
    )
    group_of = np.empty(p.groups * p.primitives_per_group, dtype=np.int32)
    rank = np.empty_like(group_of)
    v_ratios = np.empty(len(group_of))
    omega_ratios = np.empty(len(group_of))
    for g in range(p.groups):
        hg = group_headings[g]
        # symmetric endpoint jitter, one dead-center primitive per group
        lat = rng.uniform(-p.lateral_spread, p.lateral_spread, p.primitives_per_group)
        lat[0] = 0.0
        order = np.argsort(np.abs(lat), kind="stable")
        for r, li in enumerate(order):
            pid = g * p.primitives_per_group + li
            # curvature that lands a horizon-length arc `lat` off axis
            kappa = 2.0 * lat[li] / (p.horizon * p.horizon)
            poses = _arc_poses(hg, kappa, p.horizon, p.path_step)
            # the swept-arc check assumes the vehicle first yaws to the group
            # heading, but execution translates along the current heading at
            # once; driving is allowed only within one group spacing of
            # aligned so the unchecked initial segment stays inside the
            # corridor's clearance margin
            v = float(np.cos(hg) ** 2) if abs(hg) < np.pi / 12 else 0.0
            om = np.clip(2.0 * hg, -1.5, 1.5) + kappa * max(v, 0.2)
            primitives.append(
                MotionPrimitive(pid, g, poses, float(v), float(om))
            )
            group_of[pid] = g
            rank[pid] = r
            v_ratios[pid] = v
            omega_ratios[pid] = om
    primitives.sort(key=lambda m: m.id)
    lib = PrimitiveLibrary(
        params=p,
        primitives=primitives,
        group_headings=group_headings,
        group_of=group_of,
        rank_in_group=rank,
        v_ratios=v_ratios,
        omega_ratios=omega_ratios,
    )
    return lib, _build_table(lib)


def _build_table(lib: PrimitiveLibrary) -> CorrespondenceTable:
    p = lib.params
    half = p.horizon
    n = int(np.ceil(2 * half / p.table_cell))
    origin = -half
    cx = origin + (np.arange(n) + 0.5) * p.table_cell
    gx, gy = np.meshgrid(cx, cx, indexing="xy")  # gy rows = i, gx cols = j
    centers = np.stack([gx.ravel(), gy.ravel()], axis=1)
    thresh = p.vehicle_radius + p.table_cell * np.sqrt(2) / 2
    per_cell = [[] for _ in range(n * n)]
    for prim in lib.primitives:
        d = _dist_points_polyline(centers, prim.poses[:, :2])
        for flat in np.flatnonzero(d <= thresh):
            per_cell[flat].append(prim.id)
    cell_start = np.zeros(n * n + 1, dtype=np.int64)
    for f, ids in enumerate(per_cell):
        cell_start[f + 1] = cell_start[f] + len(ids)
    ids = np.empty(cell_start[-1], dtype=np.int64)
    for f, lst in enumerate(per_cell):
        ids[cell_start[f] : cell_start[f + 1]] = sorted(lst)
    return CorrespondenceTable(origin=origin, cell=p.table_cell, n=n,
                               cell_start=cell_start, ids=ids)


def _dist_points_polyline(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Min distance from each point to the polyline, vectorized."""
    a = poly[:-1]
    b = poly[1:]
    ab = b - a
    ab2 = (ab * ab).sum(axis=1)
    keep = ab2 > 1e-18
    a, ab, ab2 = a[keep], ab[keep], ab2[keep]
    if len(a) == 0:
        return np.hypot(pts[:, 0] - poly[0, 0], pts[:, 1] - poly[0, 1])
    ap = pts[:, None, :] - a[None, :, :]
    t = np.clip((ap * ab[None]).sum(axis=2) / ab2[None], 0.0, 1.0)
    close = a[None] + t[..., None] * ab[None]
    d = np.hypot(pts[:, None, 0] - close[..., 0], pts[:, None, 1] - close[..., 1])
    return d.min(axis=1)


_LIB_CACHE: dict = {}


def get_library(params: PrimitiveLibraryParams | None = None):
    """build_library with caching; the library is immutable once built."""
    p = params or PrimitiveLibraryParams()
    if p not in _LIB_CACHE:
        _LIB_CACHE[p] = build_library(p)
    return _LIB_CACHE[p]


_OFFSET_CACHE: dict = {}


def _disk_offsets(radius_cells: int):
    """Integer (di, dj) offsets covering a disk of the given cell radius."""
    cached = _OFFSET_CACHE.get(radius_cells)
    if cached is None:
        r = radius_cells
        di, dj = np.mgrid[-r:r + 1, -r:r + 1]
        keep = di * di + dj * dj <= r * r
        cached = (di[keep].ravel(), dj[keep].ravel())
        _OFFSET_CACHE[radius_cells] = cached
    return cached


def find_blocked(
    table: CorrespondenceTable,
    points: np.ndarray,
    n_primitives: int,
    terrain_snapshot: TerrainSnapshot | None = None,
    vehicle_pose: Pose | None = None,
    waypoint_dist: float | None = None,
    is_final: bool = False,
    scale: float = 1.0,
    headings: np.ndarray | None = None,
) -> np.ndarray:
    """Bitmask of primitives colliding with any obstacle point.

    Points are vehicle-frame (x, y) or (x, y, z) rows. When a terrain
    snapshot and pose are given, its non-traversable cell centers join the
    point set. Beyond-waypoint points are ignored for final approaches.
    A scale below 1 evaluates the arcs shrunk by that factor; point
    lookups are dilated so the world-frame clearance stays constant.
    """
    if not 0.0 < scale <= 1.0:
        raise ValueError("scale must be in (0, 1]")
    if points is None or len(points) == 0:
        pts = np.empty((0, 2))
    else:
        pts = np.asarray(points, dtype=float)[:, :2]
    if terrain_snapshot is not None and vehicle_pose is not None:
        ii, jj = np.nonzero(terrain_snapshot.status == NON_TRAVERSABLE)
        if len(ii):
            wx = terrain_snapshot.origin[0] + (jj + 0.5) * terrain_snapshot.cell_size
            wy = terrain_snapshot.origin[1] + (ii + 0.5) * terrain_snapshot.cell_size
            c, s = np.cos(vehicle_pose.heading), np.sin(vehicle_pose.heading)
            dx = wx - vehicle_pose.x
            dy = wy - vehicle_pose.y
            local = np.stack([c * dx + s * dy, -s * dx + c * dy], axis=1)
            pts = np.concatenate([pts, local]) if len(pts) else local
    mask = np.zeros(n_primitives, dtype=np.uint8)
    if len(pts) == 0:
        return mask
    if is_final and waypoint_dist is not None:
        pts = pts[np.hypot(pts[:, 0], pts[:, 1]) <= waypoint_dist]
    # a point inside the clearance radius of the origin touches every arc's
    # first cell, so the table cannot discriminate between headings. Arcs
    # pointing away from such a point move away from it monotonically, so
    # when headings are given treat it as a half-plane constraint instead
    # of a global block; without headings it blocks everything.
    thresh = VEHICLE_RADIUS + table.cell * np.sqrt(2) / 2
    r = 0
    if scale != 1.0:
        r = int(np.ceil(thresh * (1.0 - scale) / scale / table.cell))
    # cell quantization lets a point reach the origin cell of every arc out
    # to this radius, so the whole band gets the grazing-cone treatment; the
    # surface margin extends it over the annulus where an arc clears the
    # obstacle cell center but not the surface inside the cell
    close_thresh = scale * (thresh + (r + np.sqrt(2)) * table.cell) \
        + CELL_SURFACE_MARGIN
    d0 = np.hypot(pts[:, 0], pts[:, 1])
    close = pts[d0 < close_thresh]
    pts = pts[d0 >= close_thresh]
    if len(close):
        if headings is None:
            mask[:] = 1
            return mask
        for px, py in close:
            beta = np.arctan2(py, px)
            d = np.hypot(px, py)
            rel = headings - beta
            # a straight pass at relative angle rel keeps d*sin|rel| of
            # clearance to the point; block only headings that would graze
            # inside the vehicle radius, so sliding parallel to a nearby
            # wall stays legal while driving into it does not
            graze = d * np.abs(np.sin(rel))
            mask[(np.cos(rel) > 0.0)
                 & (graze < VEHICLE_RADIUS + CELL_SURFACE_MARGIN)] = 1
    if len(pts) == 0:
        return mask
    if scale != 1.0:
        pts = pts / scale
    j = np.floor((pts[:, 0] - table.origin) / table.cell).astype(np.int64)
    i = np.floor((pts[:, 1] - table.origin) / table.cell).astype(np.int64)
    if scale != 1.0:
        # the table bakes in the clearance threshold; dilate lookups so
        # the scaled-down arcs keep the full world-frame clearance
        di, dj = _disk_offsets(r)
        i = (i[:, None] + di).ravel()
        j = (j[:, None] + dj).ravel()
    ok = (i >= 0) & (i < table.n) & (j >= 0) & (j < table.n)
    if ok.any():
        kernels.table_lookup(
            np.ascontiguousarray(i[ok]), np.ascontiguousarray(j[ok]),
            table.n, table.cell_start, table.ids, mask,
        )
    return mask


def select_group(lib: PrimitiveLibrary, blocked_mask: np.ndarray, waypoint_xy):
    """Best heading group toward the vehicle-frame waypoint, or None."""
    p = lib.params
    free = np.bincount(lib.group_of[blocked_mask == 0], minlength=p.groups)
    if free.sum() == 0:
        return None
    bearing = np.arctan2(waypoint_xy[1], waypoint_xy[0])
    adiff = np.abs([angdiff(h, bearing) for h in lib.group_headings])
    score = (free / p.primitives_per_group) * np.exp(-adiff / HEADING_SIGMA)
    score[free == 0] = -np.inf
    best = score.max()
    cand = np.flatnonzero(score >= best - 1e-12)
    # ties: closest heading first, then smallest id
    cand = cand[np.lexsort((cand, adiff[cand]))]
    return int(cand[0])


def prepare_waypoint(
    path,
    vehicle_pose: Pose,
    look_ahead: float,
    horizon: float,
    is_final: bool,
    terrain_snapshot: TerrainSnapshot | None = None,
    nav_boundary=None,
    speed_limit: float = CmdVel.V_MAX,
) -> WaypointCmd:
    """Pick the farthest line-of-sight path point within look-ahead, and
    push non-final waypoints out to the planning horizon along the same
    bearing so the vehicle keeps speed through sharp turns.

    Sight is checked against obstacle cells inflated by the vehicle radius:
    a ray squeezing through a sub-clearance gap would aim the vehicle at a
    corridor its body cannot enter, and the conflict with the collision
    masks leaves it thrashing against the corner."""
    path = np.asarray(path, dtype=float).reshape(-1, 2)
    if len(path) == 0:
        raise ValueError("path is empty")
    los_status = None
    if terrain_snapshot is not None:
        from scipy import ndimage

        rc = PASSABLE_CLEARANCE / terrain_snapshot.cell_size
        r = int(np.ceil(rc))
        di, dj = np.mgrid[-r:r + 1, -r:r + 1]
        fat = ndimage.binary_dilation(
            terrain_snapshot.status == NON_TRAVERSABLE,
            structure=di * di + dj * dj <= rc * rc,
        )
        # the vehicle legitimately hugs walls while rounding tight corners;
        # inflation right around it would occlude every ray at its start
        vi, vj = terrain_snapshot.cell_of(vehicle_pose.x, vehicle_pose.y)
        rv = r + 1
        i0, i1 = max(vi - rv, 0), min(vi + rv + 1, fat.shape[0])
        j0, j1 = max(vj - rv, 0), min(vj + rv + 1, fat.shape[1])
        fat[i0:i1, j0:j1] = False
        los_status = terrain_snapshot.status.copy()
        los_status[fat] = NON_TRAVERSABLE
    best = None
    best_is_last = False
    for idx in range(len(path)):
        px, py = path[idx]
        if np.hypot(px - vehicle_pose.x, py - vehicle_pose.y) > look_ahead:
            break
        if los_status is not None and not kernels.los_grid(
            los_status, vehicle_pose.x, vehicle_pose.y, px, py,
            terrain_snapshot.origin[0], terrain_snapshot.origin[1],
            terrain_snapshot.cell_size, 0,
        ):
            # stop at the first occluded point: scanning past it could pick
            # a later tour point that doubles back through open ground and
            # shortcut the whole approach leg
            break
        best = (px, py)
        best_is_last = idx == len(path) - 1
    fallback = best is None
    if fallback:
        best = tuple(path[0])
        best_is_last = len(path) == 1
    final_here = is_final and best_is_last
    dx = best[0] - vehicle_pose.x
    dy = best[1] - vehicle_pose.y
    dist = np.hypot(dx, dy)
    if not final_here and not fallback and 1e-9 < dist < horizon:
        scale = horizon / dist
        best = (vehicle_pose.x + dx * scale, vehicle_pose.y + dy * scale)
    return WaypointCmd(
        waypoint=(float(best[0]), float(best[1])),
        nav_boundary=nav_boundary,
        speed_limit=speed_limit,
        is_final=final_here,
        fallback=fallback,
    )


def compute_cmd(
    lib: PrimitiveLibrary,
    group_id,
    blocked_mask: np.ndarray,
    waypoint_cmd: WaypointCmd,
    vehicle_pose: Pose,
) -> CmdVel:
    """Command from the best free primitive of the selected group."""
    if group_id is None:
        return CmdVel(0.0, 0.0)
    members = np.flatnonzero(lib.group_of == group_id)
    free = members[blocked_mask[members] == 0]
    if len(free) == 0:
        return CmdVel(0.0, 0.0)
    if waypoint_cmd.nav_boundary is not None:
        inside = [
            pid for pid in free
            if _endpoint_in_boundary(lib.primitives[pid], vehicle_pose,
                                     waypoint_cmd.nav_boundary)
        ]
        if not inside:
            return CmdVel(0.0, 0.0)
        free = np.array(inside)
    best = free[np.argmin(lib.rank_in_group[free])]
    v = lib.v_ratios[best] * waypoint_cmd.speed_limit
    omega = lib.omega_ratios[best] * waypoint_cmd.speed_limit
    if waypoint_cmd.is_final:
        dist = np.hypot(
            waypoint_cmd.waypoint[0] - vehicle_pose.x,
            waypoint_cmd.waypoint[1] - vehicle_pose.y,
        )
        v *= min(1.0, dist / lib.params.horizon)
    return CmdVel(float(v), float(omega)).clamped()


def _endpoint_in_boundary(prim: MotionPrimitive, pose: Pose, boundary) -> bool:
    ex, ey, _ = prim.poses[-1]
    c, s = np.cos(pose.heading), np.sin(pose.heading)
    wx = pose.x + c * ex - s * ey
    wy = pose.y + s * ex + c * ey
    return point_in_polygon(wx, wy, np.asarray(boundary, dtype=float))


def dump_library_csv(lib: PrimitiveLibrary) -> str:
    """Per-pose CSV of the primitive fan, for plotting."""
    lines = ["primitive_id,group_id,x,y,heading"]
    for prim in lib.primitives:
        for x, y, h in prim.poses:
            lines.append(f"{prim.id},{prim.group_id},{x:.4f},{y:.4f},{h:.4f}")
    return "\n".join(lines) + "\n"
