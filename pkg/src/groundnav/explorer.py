"""Hierarchical exploration planner.

A dense local pass picks viewpoints inside a horizon box by greedy set
cover over uncovered surface cells and orders them with a TSP; a sparse
global pass tours the subspaces that still hold uncovered surface. The two
are concatenated into one exploration path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from scipy import ndimage

from . import kernels, local_planner as lp, tsp
from .terrain import NON_TRAVERSABLE, TRAVERSABLE, UNKNOWN, TerrainSnapshot
from .world import VEHICLE_RADIUS, Pose, RegisteredScan

UNEXPLORED, EXPLORING, COVERED = 0, 1, 2

SEEN_RAYS = 360
UNKNOWN_COST_FACTOR = 1.5
# consecutive disagreeing snapshots needed to flip a known cell's status
VOTE_CAP = 5
# a cell reclassified this many times is sensor-borderline; pin it as an
# obstacle so it stops pumping phantom frontier into the target set
CHATTER_FLIPS = 4


@dataclass(frozen=True)
class ExplorerParams:
    bounds: tuple  # (xmin, ymin, xmax, ymax) area of interest
    cell_size: float = 0.25
    subspace_side: float = 8.0
    coverage_range: float = 12.0
    horizon_box: float = 20.0
    max_candidates: int = 64
    rng_seed: int = 0


@dataclass(frozen=True)
class Viewpoint:
    position: tuple
    covered: np.ndarray  # indices into the local uncovered-surface list


@dataclass(frozen=True)
class ExplorationPath:
    waypoints: list  # [(x, y), ...]
    done: bool


class CoverageModel:
    """Global sticky terrain knowledge plus surface-coverage bookkeeping."""

    def __init__(self, params: ExplorerParams):
        self.params = params
        xmin, ymin, xmax, ymax = params.bounds
        cs = params.cell_size
        self.nx = int(np.ceil((xmax - xmin) / cs))
        self.ny = int(np.ceil((ymax - ymin) / cs))
        self.origin = (xmin, ymin)
        self.status = np.zeros((self.ny, self.nx), dtype=np.uint8)
        self.seen = np.zeros((self.ny, self.nx), dtype=np.uint8)
        # confidence in the current status of each known cell; snapshots
        # that disagree only flip a cell after outvoting it (see
        # update_coverage), so borderline cells cannot strobe the map
        self.vote = np.zeros((self.ny, self.nx), dtype=np.int8)
        # how often each cell has flipped between known classes
        self.flips = np.zeros((self.ny, self.nx), dtype=np.uint8)
        sub = params.subspace_side
        self.sub_nx = int(np.ceil((xmax - xmin) / sub))
        self.sub_ny = int(np.ceil((ymax - ymin) / sub))
        self.sub_status = np.zeros((self.sub_ny, self.sub_nx), dtype=np.uint8)
        # traversable component connected to the vehicle; starts permissive
        self.reach = np.ones((self.ny, self.nx), dtype=bool)
        # first viewpoint of the previous local plan; replans keep heading
        # there until the vehicle arrives or the cell stops being passable,
        # so the tour direction cannot flip every period and whipsaw the
        # follower. Dropping it merely because its coverage value dipped
        # re-opens a limit cycle: approach sweeps erode the value before
        # arrival and the commitment would bounce between rival viewpoints
        self.commit_vp = None
        # viewpoints already stood on; the sweep from there has happened, so
        # re-choosing them can only produce a vehicle parked forever
        self.banned_vps = set()

    # ------------------------------------------------------------- queries

    def cell_of(self, x, y):
        cs = self.params.cell_size
        return int((y - self.origin[1]) / cs), int((x - self.origin[0]) / cs)

    def cell_center(self, i, j):
        cs = self.params.cell_size
        return (self.origin[0] + (j + 0.5) * cs, self.origin[1] + (i + 0.5) * cs)

    def frontier_mask(self) -> np.ndarray:
        """Unknown cells adjacent (8-way) to a traversable cell."""
        trav = self.status == TRAVERSABLE
        near = _dilate(trav)
        return (self.status == UNKNOWN) & near

    def boundary_mask(self) -> np.ndarray:
        """Non-traversable cells adjacent to a traversable cell."""
        trav = self.status == TRAVERSABLE
        near = _dilate(trav)
        return (self.status == NON_TRAVERSABLE) & near

    def surface_mask(self) -> np.ndarray:
        return self.frontier_mask() | self.boundary_mask()

    def uncovered_mask(self) -> np.ndarray:
        """Surface still to be swept. Only surface bordering the passable
        reachable component counts: the vehicle can stand next to such a
        cell, where the sensor sweep is guaranteed to resolve it. Surface
        behind sub-clearance slits or unreachable traversable islands
        (sensor bleed past walls) can never be swept reliably and holds no
        exploration value."""
        return self.surface_mask() & (self.seen == 0) & _dilate(self.reach)

    def refresh_reach(self, pose: Pose):
        vi, vj = self.cell_of(pose.x, pose.y)
        vi = min(max(vi, 0), self.ny - 1)
        vj = min(max(vj, 0), self.nx - 1)
        # no seed window here: forcing the cells under a wall-hugging vehicle
        # passable can bridge sub-clearance gaps and splice whole far-away
        # components in and out of reach as the vehicle moves, which makes
        # the uncovered-target set flicker and the tour churn forever
        passable = passable_mask(self.status, self.params.cell_size)
        lbl, n = ndimage.label(passable, structure=np.ones((3, 3), dtype=int))
        if n == 0:
            self.reach = np.ones((self.ny, self.nx), dtype=bool)
            return
        comp = lbl[vi, vj]
        if comp == 0:
            # vehicle cell itself low-clearance; take the nearest labeled cell
            ii, jj = np.nonzero(lbl)
            k = int(np.argmin((ii - vi) ** 2 + (jj - vj) ** 2))
            comp = lbl[ii[k], jj[k]]
        self.reach = lbl == comp

    def explored_area(self) -> float:
        cs = self.params.cell_size
        return float((self.status == TRAVERSABLE).sum()) * cs * cs

    def subspace_centroid(self, si, sj):
        s = self.params.subspace_side
        return (self.origin[0] + (sj + 0.5) * s, self.origin[1] + (si + 0.5) * s)


def passable_mask(status: np.ndarray, cell_size: float, seed=None) -> np.ndarray:
    """Traversable cells with enough clearance to the nearest known obstacle
    cell center for the follower to actually drive there. Without the margin,
    grid paths thread gaps the vehicle body cannot fit through, or corridors
    the follower's near-field collision logic refuses. Traversable cells
    around the seed cell stay passable so a vehicle standing close to a wall
    can still plan its way out."""
    free = status != NON_TRAVERSABLE
    clear = ndimage.distance_transform_edt(free) * cell_size
    out = ((status == TRAVERSABLE) & (clear > lp.PASSABLE_CLEARANCE)).astype(np.uint8)
    if seed is not None:
        si, sj = seed
        r = int(np.ceil(VEHICLE_RADIUS / cell_size))
        i0, i1 = max(si - r, 0), min(si + r + 1, status.shape[0])
        j0, j1 = max(sj - r, 0), min(sj + r + 1, status.shape[1])
        win = status[i0:i1, j0:j1]
        out[i0:i1, j0:j1][win == TRAVERSABLE] = 1
    return out


def _dilate(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    out[1:, 1:] |= mask[:-1, :-1]
    out[:-1, :-1] |= mask[1:, 1:]
    out[1:, :-1] |= mask[:-1, 1:]
    out[:-1, 1:] |= mask[1:, :-1]
    return out


def update_coverage(
    cov: CoverageModel,
    snapshot: TerrainSnapshot,
    pose: Pose,
    scan: RegisteredScan | None = None,
) -> CoverageModel:
    """Fold a terrain snapshot into global knowledge and mark what the
    sensor has swept from this pose."""
    p = cov.params
    cs = p.cell_size
    # overlap window between the rolling snapshot and the global grid
    dj = int(round((snapshot.origin[0] - cov.origin[0]) / cs))
    di = int(round((snapshot.origin[1] - cov.origin[1]) / cs))
    h, w = snapshot.status.shape
    i0, i1 = max(0, di), min(cov.ny, di + h)
    j0, j1 = max(0, dj), min(cov.nx, dj + w)
    if i0 < i1 and j0 < j1:
        local = snapshot.status[i0 - di : i1 - di, j0 - dj : j1 - dj]
        dest = cov.status[i0:i1, j0:j1]
        vote = cov.vote[i0:i1, j0:j1]
        known = local != UNKNOWN
        # first information is adopted outright; a later reclassification
        # must persist across several snapshots before it lands. Borderline
        # cells otherwise strobe with scan-window expiry, and every flip
        # ripples through clearance, reach and the uncovered-target set
        fresh = known & (dest == UNKNOWN)
        dest[fresh] = local[fresh]
        vote[fresh] = VOTE_CAP
        agree = known & ~fresh & (local == dest)
        vote[agree] = np.minimum(vote[agree] + 1, VOTE_CAP)
        dis = known & ~fresh & (local != dest)
        vote[dis] -= 1
        flip = dis & (vote < 0)
        dest[flip] = local[flip]
        vote[flip] = 1
        fl = cov.flips[i0:i1, j0:j1]
        fl[flip] = np.minimum(fl[flip] + 1, CHATTER_FLIPS)
        chatter = (fl >= CHATTER_FLIPS) & (dest != UNKNOWN)
        dest[chatter] = NON_TRAVERSABLE
    kernels.update_seen(
        cov.status, cov.seen, pose.x, pose.y, SEEN_RAYS, p.coverage_range,
        cov.origin[0], cov.origin[1], cs,
    )
    cov.refresh_reach(pose)
    refresh_subspaces(cov)
    return cov


def refresh_subspaces(cov: CoverageModel):
    p = cov.params
    ratio = int(round(p.subspace_side / p.cell_size))
    unc = cov.uncovered_mask()
    observed = cov.status != UNKNOWN
    for si in range(cov.sub_ny):
        for sj in range(cov.sub_nx):
            blk = np.s_[si * ratio : (si + 1) * ratio, sj * ratio : (sj + 1) * ratio]
            if unc[blk].any():
                cov.sub_status[si, sj] = EXPLORING
            elif observed[blk].any() or cov.sub_status[si, sj] != UNEXPLORED:
                cov.sub_status[si, sj] = COVERED
    return cov


def _grid_path(parent: np.ndarray, w: int, ti: int, tj: int):
    """Backtrack a Dijkstra parent field to (i, j) cell list, start last."""
    cells = []
    idx = ti * w + tj
    while idx >= 0:
        cells.append((idx // w, idx % w))
        idx = parent[idx // w, idx % w]
    return cells[::-1]


def plan_local(
    cov: CoverageModel,
    snapshot: TerrainSnapshot,
    pose: Pose,
    rng: np.random.Generator | None = None,
):
    """Viewpoints covering the local uncovered surface, TSP-ordered, plus
    the concatenated grid path visiting them."""
    p = cov.params
    cs = p.cell_size
    del rng  # kept in the signature for callers; selection is deterministic
    half = p.horizon_box / 2
    vi, vj = cov.cell_of(pose.x, pose.y)
    ri0 = max(0, vi - int(half / cs))
    ri1 = min(cov.ny, vi + int(half / cs))
    rj0 = max(0, vj - int(half / cs))
    rj1 = min(cov.nx, vj + int(half / cs))
    box = np.s_[ri0:ri1, rj0:rj1]
    unc = cov.uncovered_mask()[box]
    targets = np.argwhere(unc)
    if len(targets) == 0:
        cov.commit_vp = None
        return [], []
    passable = passable_mask(cov.status, cs, seed=(vi, vj))[box]
    dist_v, parent_v = kernels.grid_dijkstra(passable, vi - ri0, vj - rj0)
    # stratified candidates at stratum centers: a deterministic function of
    # the coverage state, so consecutive replans agree and the follower is
    # not whipsawed between rival viewpoint sets
    side = int(np.ceil(np.sqrt(p.max_candidates)))
    h, w = passable.shape
    cand_cells = []
    seen_cells = set()

    def _add(ci, cj):
        if (ci, cj) in seen_cells or (ci + ri0, cj + rj0) in cov.banned_vps:
            return
        if passable[ci, cj] and np.isfinite(dist_v[ci, cj]):
            seen_cells.add((ci, cj))
            cand_cells.append((ci, cj))

    for a in range(side):
        for b in range(side):
            if len(cand_cells) >= p.max_candidates:
                break
            ci = min(int((a + 0.5) * h / side), h - 1)
            cj = min(int((b + 0.5) * w / side), w - 1)
            _add(ci, cj)
    # every uncovered cell borders passable space; standing on that border
    # cell always claims it, so coverage can never strand a target
    for ti, tj in targets:
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                ni, nj = ti + di, tj + dj
                if 0 <= ni < h and 0 <= nj < w:
                    _add(ni, nj)
    _add(vi - ri0, vj - rj0)  # standing still is a candidate
    commit_cell = None
    if cov.commit_vp is not None:
        cx, cy = cov.commit_vp
        if np.hypot(cx - pose.x, cy - pose.y) < 0.6:
            # arrived: the sweep from this spot has happened, so standing
            # here again can never claim anything new
            cov.banned_vps.add(cov.cell_of(cx, cy))
            cov.commit_vp = None
        else:
            ci, cj = cov.cell_of(cx, cy)
            ci -= ri0
            cj -= rj0
            if 0 <= ci < h and 0 <= cj < w:
                _add(ci, cj)
                if (ci, cj) in seen_cells:
                    commit_cell = (ci, cj)
                else:
                    # the exact cell can lose passability for a replan when
                    # its clearance sits right at the threshold; snap to the
                    # nearest usable neighbor rather than dropping the
                    # commitment and churning the tour
                    best = None
                    for di in range(-2, 3):
                        for dj in range(-2, 3):
                            ni, nj = ci + di, cj + dj
                            if (0 <= ni < h and 0 <= nj < w
                                    and passable[ni, nj]
                                    and np.isfinite(dist_v[ni, nj])
                                    and (ni + ri0, nj + rj0) not in cov.banned_vps):
                                r2 = di * di + dj * dj
                                if best is None or r2 < best[0]:
                                    best = (r2, ni, nj)
                    if best is not None:
                        _add(best[1], best[2])
                        commit_cell = (best[1], best[2])
    if not cand_cells:
        cov.commit_vp = None
        return [], []
    origin = cov.origin
    # visibility: target within coverage range and line of sight
    cover_sets = []
    tx = origin[0] + (targets[:, 1] + rj0 + 0.5) * cs
    ty = origin[1] + (targets[:, 0] + ri0 + 0.5) * cs
    for ci, cj in cand_cells:
        px = origin[0] + (cj + rj0 + 0.5) * cs
        py = origin[1] + (ci + ri0 + 0.5) * cs
        near = np.flatnonzero(np.hypot(tx - px, ty - py) <= p.coverage_range)
        # unknown blocks sight here, mirroring the sweep model: a viewpoint
        # may only claim surface its sweep will actually credit
        vis_mask = kernels.los_grid_many(
            cov.status, px, py, tx[near], ty[near], origin[0], origin[1], cs, 1
        )
        cover_sets.append(near[vis_mask == 1])
    # greedy set cover; a still-profitable committed viewpoint goes first
    uncovered = np.ones(len(targets), dtype=bool)
    chosen = []
    if commit_cell is not None:
        # held until arrival even if approach sweeps already emptied its
        # cover set; finishing the short remaining leg is cheaper than the
        # limit cycle of commitments that bounce before any is ever reached
        k = cand_cells.index(commit_cell)
        chosen.append(k)
        uncovered[cover_sets[k]] = False
    while uncovered.any():
        gains = [int(uncovered[s].sum()) for s in cover_sets]
        k = int(np.argmax(gains))
        if gains[k] == 0:
            break
        chosen.append(k)
        uncovered[cover_sets[k]] = False
    if not chosen:
        cov.commit_vp = None
        return [], []
    viewpoints = []
    for k in chosen:
        ci, cj = cand_cells[k]
        pos = (origin[0] + (cj + rj0 + 0.5) * cs, origin[1] + (ci + ri0 + 0.5) * cs)
        viewpoints.append(Viewpoint(position=pos, covered=cover_sets[k]))
    # order viewpoints by open TSP from the vehicle over grid distances
    nodes = [(vi - ri0, vj - rj0)] + [cand_cells[k] for k in chosen]
    nmat = len(nodes)
    dmat = np.zeros((nmat, nmat))
    parents = [parent_v]
    dists = [dist_v]
    for ci, cj in nodes[1:]:
        d, par = kernels.grid_dijkstra(passable, ci, cj)
        dists.append(d)
        parents.append(par)
    for a in range(nmat):
        for b in range(nmat):
            if a != b:
                dmat[a, b] = dists[a][nodes[b]] * cs
    big = np.isinf(dmat)
    dmat[big] = 1e6  # unreachable viewpoints priced out, never visited first
    committed = commit_cell is not None and chosen[0] == cand_cells.index(commit_cell)
    if committed and nmat > 2:
        # committed viewpoint is visited first; tour the rest from there
        sub = dmat[1:, 1:]
        inst = tsp.TspInstance(sub, mode=tsp.OPEN_FIXED_START, start_index=0)
        if nmat - 1 <= 11:
            sub_order, _ = tsp.solve_exact(inst)
        else:
            sub_order, _ = tsp.solve_heuristic(inst)
        order = [0] + [k + 1 for k in sub_order]
    else:
        inst = tsp.TspInstance(dmat, mode=tsp.OPEN_FIXED_START, start_index=0)
        if nmat <= 11:
            order, _ = tsp.solve_exact(inst)
        else:
            order, _ = tsp.solve_heuristic(inst)
    ordered_vps = [viewpoints[k - 1] for k in order[1:]]
    cov.commit_vp = ordered_vps[0].position if ordered_vps else None
    # concatenate grid paths leg by leg
    path_pts = []
    for leg in range(len(order) - 1):
        a, b = order[leg], order[leg + 1]
        cells = _grid_path(parents[a], passable.shape[1], *nodes[b])
        pts = [
            (origin[0] + (cj + rj0 + 0.5) * cs, origin[1] + (ci + ri0 + 0.5) * cs)
            for ci, cj in cells
        ]
        path_pts.extend(pts if leg == 0 else pts[1:])
    return ordered_vps, path_pts


def plan_global(cov: CoverageModel, pose: Pose):
    """Open tour over the centroids of subspaces still holding uncovered
    surface, nearest-knowledge-first."""
    subs = np.argwhere(cov.sub_status == EXPLORING)
    if len(subs) == 0:
        return []
    centroids = [cov.subspace_centroid(si, sj) for si, sj in subs]
    cs = cov.params.cell_size
    pi, pj = cov.cell_of(pose.x, pose.y)
    passable = passable_mask(cov.status, cs, seed=(pi, pj))
    nodes_xy = [(pose.x, pose.y)] + centroids
    n = len(nodes_xy)
    dmat = np.zeros((n, n))
    dist_fields = []
    for x, y in nodes_xy:
        i, j = cov.cell_of(x, y)
        i = min(max(i, 0), cov.ny - 1)
        j = min(max(j, 0), cov.nx - 1)
        if passable[i, j]:
            d, _ = kernels.grid_dijkstra(passable, i, j)
        else:
            d = None
        dist_fields.append(d)
    for a in range(n):
        for b in range(n):
            if a == b:
                continue
            euc = float(np.hypot(nodes_xy[a][0] - nodes_xy[b][0],
                                 nodes_xy[a][1] - nodes_xy[b][1]))
            d = dist_fields[a]
            if d is not None:
                bi, bj = cov.cell_of(*nodes_xy[b])
                bi = min(max(bi, 0), cov.ny - 1)
                bj = min(max(bj, 0), cov.nx - 1)
                g = d[bi, bj] * cs
                dmat[a, b] = g if np.isfinite(g) else euc * UNKNOWN_COST_FACTOR
            else:
                dmat[a, b] = euc * UNKNOWN_COST_FACTOR
    inst = tsp.TspInstance(dmat, mode=tsp.OPEN_FIXED_START, start_index=0)
    if n <= 11:
        order, _ = tsp.solve_exact(inst)
    else:
        order, _ = tsp.solve_heuristic(inst)
    return [centroids[k - 1] for k in order[1:]]


def compose(
    cov: CoverageModel,
    pose: Pose,
    local_path,
    global_tour,
) -> ExplorationPath:
    """Local detailed path first, then a connector toward the first global
    subspace, truncated at the horizon box."""
    if not local_path and not global_tour:
        return ExplorationPath(waypoints=[], done=True)
    waypoints = list(local_path)
    if global_tour:
        anchor = waypoints[-1] if waypoints else (pose.x, pose.y)
        connector = _connector(cov, anchor, global_tour[0])
        half = cov.params.horizon_box / 2
        for pt in connector[1:]:
            if abs(pt[0] - pose.x) > half or abs(pt[1] - pose.y) > half:
                clipped = _clip_to_box(anchor, pt, pose, half)
                if clipped is not None:
                    waypoints.append(clipped)
                break
            waypoints.append(pt)
            anchor = pt
    return ExplorationPath(waypoints=waypoints, done=False)


def _connector(cov: CoverageModel, start, goal):
    cs = cov.params.cell_size
    si, sj = cov.cell_of(*start)
    passable = passable_mask(cov.status, cs, seed=(si, sj))
    gi, gj = cov.cell_of(*goal)
    gi = min(max(gi, 0), cov.ny - 1)
    gj = min(max(gj, 0), cov.nx - 1)
    if 0 <= si < cov.ny and 0 <= sj < cov.nx and passable[si, sj]:
        dist, parent = kernels.grid_dijkstra(passable, si, sj)
        if np.isfinite(dist[gi, gj]):
            cells = _grid_path(parent, cov.nx, gi, gj)
            return [cov.cell_center(ci, cj) for ci, cj in cells]
        # head to the reachable cell nearest the goal
        reach = np.isfinite(dist)
        if reach.any():
            ii, jj = np.nonzero(reach)
            xx = cov.origin[0] + (jj + 0.5) * cs
            yy = cov.origin[1] + (ii + 0.5) * cs
            k = int(np.argmin(np.hypot(xx - goal[0], yy - goal[1])))
            cells = _grid_path(parent, cov.nx, ii[k], jj[k])
            return [cov.cell_center(ci, cj) for ci, cj in cells]
    return [start, goal]


def _clip_to_box(a, b, pose: Pose, half: float):
    """First intersection of segment a-b with the horizon box border."""
    lo = 0.0
    hi = 1.0
    for _ in range(40):
        mid = (lo + hi) / 2
        x = a[0] + (b[0] - a[0]) * mid
        y = a[1] + (b[1] - a[1]) * mid
        if abs(x - pose.x) > half or abs(y - pose.y) > half:
            hi = mid
        else:
            lo = mid
    if lo <= 0:
        return None
    return (a[0] + (b[0] - a[0]) * lo, a[1] + (b[1] - a[1]) * lo)


def plan_exploration(
    cov: CoverageModel,
    snapshot: TerrainSnapshot,
    pose: Pose,
    rng: np.random.Generator | None = None,
) -> ExplorationPath:
    """One full replan: local set cover + global tour, composed."""
    _, local_path = plan_local(cov, snapshot, pose, rng)
    tour = plan_global(cov, pose)
    return compose(cov, pose, local_path, tour)


def dump_state_csv(cov: CoverageModel) -> str:
    """Subspace statuses plus covered fraction, one row per subspace."""
    names = {UNEXPLORED: "unexplored", EXPLORING: "exploring", COVERED: "covered"}
    surface = cov.surface_mask()
    total = int(surface.sum())
    covered = int((surface & (cov.seen == 1)).sum())
    frac = covered / total if total else 1.0
    lines = ["si,sj,status,covered_fraction"]
    for si in range(cov.sub_ny):
        for sj in range(cov.sub_nx):
            lines.append(f"{si},{sj},{names[cov.sub_status[si, sj]]},{frac:.4f}")
    return "\n".join(lines) + "\n"
