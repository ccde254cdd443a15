"""Route planning over a reduced visibility graph.

Obstacle cells are vectorized into polygons, merged across frames on a
scratch grid, and kept in a visibility graph restricted to convex vertices
and tangent edges. Queries run A* over that graph in either known mode
(observed space only) or unknown mode (optimistic through unobserved space
at a cost penalty).
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass

import numpy as np
from matplotlib.path import Path as MplPath
from scipy import ndimage

from . import geometry as geo
from . import kernels
from .terrain import NON_TRAVERSABLE, UNKNOWN, TerrainSnapshot
from .world import VEHICLE_RADIUS

SIMPLIFY_EPS = 0.2
MERGE_CELL = 0.1
MIN_CLUSTER_CELLS = 3
UNKNOWN_COST_FACTOR = 1.2
REPLAN_IMPROVEMENT = 0.9
DEFAULT_INFLATE = VEHICLE_RADIUS + 0.1

KNOWN, UNKNOWN_MODE = "known", "unknown"
FREE_EDGE, UNKNOWN_EDGE = 0, 1

_EIGHT = np.ones((3, 3), dtype=int)


@dataclass
class ObstaclePolygon:
    id: int
    vertices: np.ndarray  # (k, 2) CCW
    convex_flags: np.ndarray
    source: str = "online"  # or "prior_map"
    last_seen_tick: int = 0

    @classmethod
    def make(cls, pid, vertices, source="online", tick=0):
        v = geo.dedup_vertices(np.asarray(vertices, dtype=float))
        v = geo.ensure_ccw(v)
        return cls(pid, v, geo.convex_flags(v), source, tick)

    @property
    def bbox(self):
        return (self.vertices[:, 0].min(), self.vertices[:, 1].min(),
                self.vertices[:, 0].max(), self.vertices[:, 1].max())

    def contains(self, x, y, strict=False) -> bool:
        r = -1e-9 if strict else 1e-9
        return bool(MplPath(self.vertices).contains_point((x, y), radius=r))


@dataclass(frozen=True)
class RouteQuery:
    start: tuple
    goal: tuple
    mode: str = UNKNOWN_MODE
    inflate: float = DEFAULT_INFLATE

    def __post_init__(self):
        if self.inflate < 0:
            raise ValueError("inflate must be nonnegative")
        if self.mode not in (KNOWN, UNKNOWN_MODE):
            raise ValueError(f"unknown mode {self.mode!r}")


UNREACHABLE = "unreachable"


class VisibilityGraph:
    """Single-writer polygon store + reduced visibility edges."""

    def __init__(self):
        self.polygons: dict[int, ObstaclePolygon] = {}
        self._next_id = itertools.count()
        # node key = (poly_id, vertex_index); edges keyed by sorted node pair
        self.edges: dict[tuple, tuple] = {}  # -> (length, label)
        self.terrain: TerrainSnapshot | None = None
        self._seg_cache = None

    # ------------------------------------------------------------ plumbing

    def fresh_id(self) -> int:
        return next(self._next_id)

    def node_pos(self, node):
        pid, k = node
        return self.polygons[pid].vertices[k]

    def nodes(self):
        out = []
        for pid in sorted(self.polygons):
            poly = self.polygons[pid]
            for k in np.flatnonzero(poly.convex_flags):
                out.append((pid, int(k)))
        return out

    def all_segments(self) -> np.ndarray:
        if self._seg_cache is None:
            segs = []
            for pid in sorted(self.polygons):
                v = self.polygons[pid].vertices
                nxt = np.roll(v, -1, axis=0)
                segs.append(np.concatenate([v, nxt], axis=1))
            self._seg_cache = (
                np.concatenate(segs) if segs else np.empty((0, 4))
            )
        return self._seg_cache

    def set_terrain(self, snapshot: TerrainSnapshot | None):
        self.terrain = snapshot

    def _invalidate(self):
        self._seg_cache = None

    # -------------------------------------------------------------- labels

    def _edge_label(self, a, b) -> int:
        if self.terrain is None:
            return FREE_EDGE
        t = self.terrain
        n = max(2, int(np.hypot(b[0] - a[0], b[1] - a[1]) / t.cell_size) + 1)
        for s in np.linspace(0.0, 1.0, n):
            x = a[0] + (b[0] - a[0]) * s
            y = a[1] + (b[1] - a[1]) * s
            i, j = t.cell_of(x, y)
            if not t.in_grid(i, j) or t.status[i, j] == UNKNOWN:
                return UNKNOWN_EDGE
        return FREE_EDGE


# ------------------------------------------------------------- extraction


def extract_polygons(
    snapshot: TerrainSnapshot, inflate: float = DEFAULT_INFLATE, tick: int = 0
):
    """Polygons around clusters of non-traversable cells."""
    blocked = snapshot.status == NON_TRAVERSABLE
    labels, nlab = ndimage.label(blocked, structure=_EIGHT)
    out = []
    cs = snapshot.cell_size
    for lab in range(1, nlab + 1):
        mask = labels == lab
        if mask.sum() < MIN_CLUSTER_CELLS:
            continue
        rings = geo.trace_boundary(mask)
        if not rings:
            continue
        ring = max(rings, key=lambda r: abs(geo.polygon_area(r)))
        world = ring * cs + np.array(snapshot.origin)
        world = geo.simplify_closed(world, SIMPLIFY_EPS)
        if len(world) < 3:
            continue
        if inflate > 0:
            world = geo.inflate_polygon(world, inflate)
        out.append(ObstaclePolygon.make(-1, world, "online", tick))
    return out


# ---------------------------------------------------------------- merging


def _overlaps(a: ObstaclePolygon, b: ObstaclePolygon) -> bool:
    ax0, ay0, ax1, ay1 = a.bbox
    bx0, by0, bx1, by1 = b.bbox
    if ax1 < bx0 or bx1 < ax0 or ay1 < by0 or by1 < ay0:
        return False
    pa = MplPath(a.vertices)
    pb = MplPath(b.vertices)
    if pa.contains_points(b.vertices, radius=1e-9).any():
        return True
    if pb.contains_points(a.vertices, radius=1e-9).any():
        return True
    va = np.concatenate([a.vertices, np.roll(a.vertices, -1, axis=0)], axis=1)
    vb = np.concatenate([b.vertices, np.roll(b.vertices, -1, axis=0)], axis=1)
    for s in va:
        for t in vb:
            if geo.seg_intersect(s[:2], s[2:], t[:2], t[2:]):
                return True
    return False


def _contained(inner: ObstaclePolygon, outer: ObstaclePolygon) -> bool:
    path = MplPath(outer.vertices)
    if not path.contains_points(inner.vertices, radius=1e-9).all():
        return False
    # a proper boundary crossing would leave part of inner outside; shared
    # boundary (identical re-observation) must not count
    vi = np.concatenate([inner.vertices, np.roll(inner.vertices, -1, axis=0)], axis=1)
    vo = np.concatenate([outer.vertices, np.roll(outer.vertices, -1, axis=0)], axis=1)
    for s in vi:
        for t in vo:
            if geo.seg_intersect(s[:2], s[2:], t[:2], t[2:], include_ends=False):
                return False
    return True


def _stamp_union(polys, cell=MERGE_CELL) -> np.ndarray:
    xs = np.concatenate([p.vertices[:, 0] for p in polys])
    ys = np.concatenate([p.vertices[:, 1] for p in polys])
    # grid anchored to a global lattice for frame-to-frame stability
    x0 = np.floor((xs.min() - cell) / cell) * cell
    y0 = np.floor((ys.min() - cell) / cell) * cell
    nx = int(np.ceil((xs.max() + cell - x0) / cell)) + 1
    ny = int(np.ceil((ys.max() + cell - y0) / cell)) + 1
    mask = np.zeros((ny, nx), dtype=bool)
    for p in polys:
        mask |= geo.fill_polygon_mask(p.vertices, x0, y0, cell, ny, nx)
    rings = geo.trace_boundary(mask)
    ring = max(rings, key=lambda r: abs(geo.polygon_area(r)))
    world = ring * cell + np.array([x0, y0])
    return geo.simplify_closed(world, SIMPLIFY_EPS / 2)


def merge_polygons(graph: VisibilityGraph, new_polys, tick: int = 0):
    """Fold freshly extracted polygons into the graph's set.

    Returns the ids of changed (added or regrown) polygons. Existing
    polygons only ever grow; re-observed shapes are recognized by
    containment and leave the set untouched.
    """
    changed = []
    for newp in new_polys:
        absorbed = False
        for poly in self_polys_sorted(graph):
            if _contained(newp, poly):
                poly.last_seen_tick = tick
                absorbed = True
                break
        if absorbed:
            continue
        group = [pid for pid, poly in sorted(graph.polygons.items())
                 if _overlaps(newp, poly)]
        if not group:
            pid = graph.fresh_id()
            p = ObstaclePolygon.make(pid, newp.vertices, newp.source, tick)
            p.id = pid
            graph.polygons[pid] = p
            changed.append(pid)
        else:
            members = [graph.polygons[pid] for pid in group]
            merged_verts = _stamp_union(members + [newp])
            source = (
                "prior_map"
                if any(m.source == "prior_map" for m in members)
                else newp.source
            )
            for pid in group:
                del graph.polygons[pid]
                graph.edges = {
                    k: v for k, v in graph.edges.items()
                    if k[0][0] != pid and k[1][0] != pid
                }
            pid = graph.fresh_id()
            p = ObstaclePolygon.make(pid, merged_verts, source, tick)
            p.id = pid
            graph.polygons[pid] = p
            changed.append(pid)
    if changed:
        graph._invalidate()
    return changed


def self_polys_sorted(graph: VisibilityGraph):
    return [graph.polygons[pid] for pid in sorted(graph.polygons)]


# ------------------------------------------------------------- visibility


def _tangent_at(poly: ObstaclePolygon, k: int, target) -> bool:
    """The segment vertex->target leaves the polygon on its free side."""
    v = poly.vertices
    n = len(v)
    u = v[k]
    p_prev = v[(k - 1) % n]
    p_next = v[(k + 1) % n]
    dx, dy = target[0] - u[0], target[1] - u[1]
    s1 = dx * (p_prev[1] - u[1]) - dy * (p_prev[0] - u[0])
    s2 = dx * (p_next[1] - u[1]) - dy * (p_next[0] - u[0])
    return s1 * s2 >= -1e-12


def _segment_clear(graph: VisibilityGraph, a, b, skip_contain=()) -> bool:
    """No proper crossing with any polygon edge and the midpoint is not
    strictly inside a polygon."""
    segs = graph.all_segments()
    if len(segs):
        cand = np.array([[a[0], a[1], b[0], b[1]]])
        if kernels.segments_block(cand, segs, 1e-9)[0]:
            return False
    mx, my = (a[0] + b[0]) / 2, (a[1] + b[1]) / 2
    for pid, poly in graph.polygons.items():
        if pid in skip_contain:
            continue
        if poly.contains(mx, my, strict=True):
            return False
    return True


def rebuild_vgraph(graph: VisibilityGraph, changed_ids=None) -> VisibilityGraph:
    """Recompute edges; with changed_ids, only edges touching those
    polygons are recomputed (plus old edges they now block)."""
    nodes = graph.nodes()
    pos = {nd: graph.node_pos(nd) for nd in nodes}
    node_set = set(nodes)
    if changed_ids is None:
        graph.edges = {}
        pairs = itertools.combinations(nodes, 2)
    else:
        changed_set = set(changed_ids)
        # drop edges whose endpoints vanished or that a changed polygon blocks
        stale = []
        for (na, nb), _ in graph.edges.items():
            if na not in node_set or nb not in node_set:
                stale.append((na, nb))
                continue
            a, b = pos[na], pos[nb]
            blocked = False
            for pid in changed_set:
                sub = _single_poly_graph(graph, pid)
                if not _segment_clear(sub, a, b):
                    blocked = True
                    break
            if blocked:
                stale.append((na, nb))
        for key in stale:
            del graph.edges[key]
        touched = [nd for nd in nodes if nd[0] in changed_set]
        pairs = (
            (na, nb)
            for na in touched
            for nb in nodes
            if na != nb
        )
    for na, nb in pairs:
        key = (na, nb) if na <= nb else (nb, na)
        if key in graph.edges:
            continue
        a, b = pos[key[0]], pos[key[1]]
        if not _tangent_at(graph.polygons[key[0][0]], key[0][1], b):
            continue
        if not _tangent_at(graph.polygons[key[1][0]], key[1][1], a):
            continue
        if not _segment_clear(graph, a, b):
            continue
        length = float(np.hypot(b[0] - a[0], b[1] - a[1]))
        graph.edges[key] = (length, graph._edge_label(a, b))
    return graph


def _single_poly_graph(graph: VisibilityGraph, pid: int) -> VisibilityGraph:
    sub = VisibilityGraph()
    sub.polygons = {pid: graph.polygons[pid]}
    return sub


# ----------------------------------------------------------------- search


def _visible_nodes(graph: VisibilityGraph, point, nodes, pos):
    """Nodes reachable by a straight clear tangent segment from a point."""
    if not nodes:
        return []
    segs = graph.all_segments()
    cands = np.array(
        [[point[0], point[1], pos[nd][0], pos[nd][1]] for nd in nodes]
    )
    blocked = (
        kernels.segments_block(cands, segs, 1e-9)
        if len(segs)
        else np.zeros(len(nodes), dtype=np.uint8)
    )
    out = []
    for idx, nd in enumerate(nodes):
        if blocked[idx]:
            continue
        if not _tangent_at(graph.polygons[nd[0]], nd[1], point):
            continue
        a, b = point, pos[nd]
        mx, my = (a[0] + b[0]) / 2, (a[1] + b[1]) / 2
        if any(p.contains(mx, my, strict=True) for p in graph.polygons.values()):
            continue
        out.append(nd)
    return out


def plan_route(graph: VisibilityGraph, query: RouteQuery):
    """Shortest start->goal path over the graph, or UNREACHABLE."""
    # points swallowed by polygon inflation are pushed to the boundary, but
    # a point deep inside a merged solid (sealed-off area) stays unreachable
    depth_limit = query.inflate + 0.3
    start = _nudge_outside(graph, query.start, depth_limit)
    goal = _nudge_outside(graph, query.goal, depth_limit)
    if start is None or goal is None:
        return UNREACHABLE
    nodes = graph.nodes()
    pos = {nd: graph.node_pos(nd) for nd in nodes}

    def usable(label):
        return label == FREE_EDGE or query.mode == UNKNOWN_MODE

    def edge_cost(length, label):
        return length if label == FREE_EDGE else length * UNKNOWN_COST_FACTOR

    adj: dict = {nd: [] for nd in nodes}
    for (na, nb), (length, label) in graph.edges.items():
        if not usable(label):
            continue
        c = edge_cost(length, label)
        adj[na].append((nb, c))
        adj[nb].append((na, c))
    S, G = ("S",), ("G",)
    pos[S], pos[G] = np.asarray(start, float), np.asarray(goal, float)
    adj[S] = []
    adj[G] = []
    for nd in _visible_nodes(graph, start, nodes, pos):
        label = graph._edge_label(start, pos[nd])
        if usable(label):
            c = edge_cost(float(np.hypot(*(pos[nd] - pos[S]))), label)
            adj[S].append((nd, c))
    for nd in _visible_nodes(graph, goal, nodes, pos):
        label = graph._edge_label(goal, pos[nd])
        if usable(label):
            c = edge_cost(float(np.hypot(*(pos[nd] - pos[G]))), label)
            adj[nd].append((G, c))
    if _segment_clear(graph, start, goal):
        label = graph._edge_label(start, goal)
        if usable(label):
            d = float(np.hypot(goal[0] - start[0], goal[1] - start[1]))
            adj[S].append((G, edge_cost(d, label)))
    # A* with Euclidean heuristic; ties broken by hop count then node order
    gx, gy = goal
    best = {S: (0.0, 0)}
    parent = {S: None}
    h0 = float(np.hypot(gx - start[0], gy - start[1]))
    heap = [(h0, 0, 0, S)]
    counter = 1
    while heap:
        f, hops, _, nd = heapq.heappop(heap)
        g, bh = best.get(nd, (np.inf, 0))
        if f - float(np.hypot(gx - pos[nd][0], gy - pos[nd][1])) > g + 1e-12:
            continue
        if nd == G:
            path = []
            cur = nd
            while cur is not None:
                path.append(tuple(map(float, pos[cur])))
                cur = parent[cur]
            path = path[::-1]
            if tuple(path[0]) != tuple(map(float, query.start)):
                path.insert(0, tuple(map(float, query.start)))
            length = sum(
                float(np.hypot(path[k + 1][0] - path[k][0],
                               path[k + 1][1] - path[k][1]))
                for k in range(len(path) - 1)
            )
            return path, length
        for nb, c in adj[nd]:
            ng = g + c
            cur = best.get(nb)
            if cur is None or ng < cur[0] - 1e-12 or (
                abs(ng - cur[0]) <= 1e-12 and hops + 1 < cur[1]
            ):
                best[nb] = (ng, hops + 1)
                parent[nb] = nd
                h = float(np.hypot(gx - pos[nb][0], gy - pos[nb][1]))
                heapq.heappush(heap, (ng + h, hops + 1, counter, nb))
                counter += 1
    return UNREACHABLE


def _nudge_outside(graph: VisibilityGraph, point, depth_limit=np.inf):
    """Project a point out of any polygon that swallowed it (inflation can
    cover the vehicle's own position). Points deeper than depth_limit stay
    put and return None: they are sealed inside, not grazing a margin."""
    x, y = float(point[0]), float(point[1])
    for _ in range(8):
        inside = None
        for poly in graph.polygons.values():
            if poly.contains(x, y, strict=True):
                inside = poly
                break
        if inside is None:
            return (x, y)
        v = inside.vertices
        nxt = np.roll(v, -1, axis=0)
        best_d, best_pt = np.inf, None
        for (a, b) in zip(v, nxt):
            ab = b - a
            t = np.clip(np.dot([x - a[0], y - a[1]], ab) / max(ab @ ab, 1e-18), 0, 1)
            px, py = a + t * ab
            d = np.hypot(px - x, py - y)
            if d < best_d:
                best_d, best_pt = d, (px, py)
        if best_d > depth_limit:
            return None
        dx, dy = best_pt[0] - x, best_pt[1] - y
        n = max(np.hypot(dx, dy), 1e-12)
        x = best_pt[0] + dx / n * 0.02
        y = best_pt[1] + dy / n * 0.02
    return (x, y)


def monitor_and_replan(graph: VisibilityGraph, current_path, query: RouteQuery):
    """Keep the executing route, improve it, or declare it dead."""
    if current_path is None or len(current_path) < 2:
        fresh = plan_route(graph, query)
        return ("new", fresh) if fresh != UNREACHABLE else ("unreachable", None)
    invalid = False
    for a, b in zip(current_path, current_path[1:]):
        if not _segment_clear(graph, a, b):
            invalid = True
            break
    remaining = sum(
        float(np.hypot(b[0] - a[0], b[1] - a[1]))
        for a, b in zip(current_path, current_path[1:])
    )
    fresh = plan_route(graph, query)
    if fresh == UNREACHABLE:
        return ("unreachable", None) if invalid else ("keep", current_path)
    path, length = fresh
    if invalid:
        return ("new", fresh)
    if length < REPLAN_IMPROVEMENT * remaining:
        return ("new", fresh)
    return ("keep", current_path)
