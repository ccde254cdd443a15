"""Deterministic 2.5D world model: geometry, procedural generators, ray-cast
lidar with world-frame registered scans, and differential-drive kinematics.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from matplotlib.path import Path as MplPath

from . import geometry as geo
from . import kernels

VEHICLE_RADIUS = 0.4
WALL_RETURN_HEIGHT = 0.5  # z of wall hits above local ground
STEP_EDGE_THRESH = 0.2  # height discontinuity that reads as a wall
GROUND_SAMPLE_SPACING = 1.0  # synthetic ground returns per meter of ray


class WorldError(ValueError):
    """World file or invariant violation, with a named locus."""


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    z: float = 0.0
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", geo.normalize_angle(self.heading))


@dataclass(frozen=True)
class CmdVel:
    v: float
    omega: float

    V_MAX = 2.0
    OMEGA_MAX = 1.5

    def clamped(self) -> "CmdVel":
        return CmdVel(
            float(np.clip(self.v, -self.V_MAX, self.V_MAX)),
            float(np.clip(self.omega, -self.OMEGA_MAX, self.OMEGA_MAX)),
        )


@dataclass(frozen=True)
class SensorParams:
    max_range: float = 15.0
    rays_per_scan: int = 720
    scan_rate: float = 10.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.max_range <= 0:
            raise WorldError("sensor max_range must be positive")
        if self.rays_per_scan < 4:
            raise WorldError("rays_per_scan must be >= 4")


@dataclass(frozen=True)
class DynamicAgent:
    footprint: np.ndarray  # shape around the origin
    path: np.ndarray  # (m, 2) waypoints the footprint center follows
    speed: float
    progress: float = 0.0  # arc length along path, loops

    def position(self) -> np.ndarray:
        pts = self.path
        if len(pts) < 2:
            return pts[0].copy() if len(pts) else np.zeros(2)
        seg = np.diff(pts, axis=0)
        seglen = np.hypot(seg[:, 0], seg[:, 1])
        total = seglen.sum()
        if total <= 0:
            return pts[0].copy()
        s = self.progress % total
        for i, L in enumerate(seglen):
            if s <= L:
                return pts[i] + seg[i] * (s / L if L > 0 else 0.0)
            s -= L
        return pts[-1].copy()

    def polygon(self) -> np.ndarray:
        return self.footprint + self.position()


@dataclass(frozen=True)
class RegisteredScan:
    timestamp: float
    sensor_pose: Pose
    points: np.ndarray  # (n, 3) world frame, ascending bearing order
    dropped_ray_bearings: np.ndarray  # (d,)
    # per-ray support data for terrain clearing
    bearings: np.ndarray = field(default=None, repr=False)  # (rays,)
    clear_ranges: np.ndarray = field(default=None, repr=False)  # (rays,)
    point_bearing_idx: np.ndarray = field(default=None, repr=False)  # (n,)


@dataclass(frozen=True)
class World:
    bounds: np.ndarray  # [xmin, ymin, xmax, ymax]
    obstacles: list
    height_patches: list  # (polygon, z) pairs
    pits: list
    dynamic_agents: list
    start_pose: Pose
    _static_segs: np.ndarray = field(default=None, repr=False, compare=False)
    _pit_segs: np.ndarray = field(default=None, repr=False, compare=False)
    _patch_paths: list = field(default=None, repr=False, compare=False)
    _pit_paths: list = field(default=None, repr=False, compare=False)
    _obs_segs: np.ndarray = field(default=None, repr=False, compare=False)
    _obs_paths: list = field(default=None, repr=False, compare=False)

    def obstacle_segments(self) -> np.ndarray:
        return self._static_segs

    def agent_segments(self) -> np.ndarray:
        segs = [geo.polygon_segments(a.polygon()) for a in self.dynamic_agents]
        if not segs:
            return np.zeros((0, 4))
        return np.vstack(segs)

    def ground_height(self, pts: np.ndarray) -> np.ndarray:
        """Ground z at each (x, y); max over containing height patches."""
        pts = np.atleast_2d(pts)
        z = np.zeros(len(pts))
        for path, patch_z in self._patch_paths:
            inside = path.contains_points(pts)
            z[inside] = np.maximum(z[inside], patch_z)
        return z

    def in_pit(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        out = np.zeros(len(pts), dtype=bool)
        for path in self._pit_paths:
            out |= path.contains_points(pts)
        return out

    def collides(self, x: float, y: float, radius: float = VEHICLE_RADIUS) -> bool:
        segs = self._obs_segs
        if segs is None:
            for poly in self.obstacles:
                if geo.circle_overlaps_polygon(x, y, radius, poly):
                    return True
        elif len(segs):
            ex_, ey = segs[:, 2] - segs[:, 0], segs[:, 3] - segs[:, 1]
            px, py = x - segs[:, 0], y - segs[:, 1]
            t = np.clip(
                (px * ex_ + py * ey) / np.maximum(ex_ * ex_ + ey * ey, 1e-18), 0.0, 1.0
            )
            d2 = (px - t * ex_) ** 2 + (py - t * ey) ** 2
            if d2.min() <= radius * radius:
                return True
            # center strictly inside (boundary distance alone misses this)
            for path in self._obs_paths:
                if path.contains_point((x, y)):
                    return True
        for a in self.dynamic_agents:
            if geo.circle_overlaps_polygon(x, y, radius, a.polygon()):
                return True
        if self._pit_paths and bool(self.in_pit(np.array([[x, y]]))[0]):
            return True
        return False

    def free_at(self, x: float, y: float) -> bool:
        bx0, by0, bx1, by1 = self.bounds
        if not (bx0 <= x <= bx1 and by0 <= y <= by1):
            return False
        return not self.collides(x, y)


def _finish_world(
    bounds, obstacles, height_patches, pits, dynamic_agents, start_pose
) -> World:
    obstacles = [geo.ensure_ccw(geo.dedup_vertices(np.asarray(p, float))) for p in obstacles]
    pits = [geo.ensure_ccw(geo.dedup_vertices(np.asarray(p, float))) for p in pits]
    height_patches = [
        (geo.ensure_ccw(geo.dedup_vertices(np.asarray(p, float))), float(z))
        for p, z in height_patches
    ]
    segs = [geo.polygon_segments(p) for p in obstacles]
    patch_paths = [(MplPath(p), z) for p, z in height_patches]
    pit_paths = [MplPath(p) for p in pits]
    # step edges: patch boundary segments with a tall enough discontinuity
    w = World(
        bounds=np.asarray(bounds, float),
        obstacles=obstacles,
        height_patches=height_patches,
        pits=pits,
        dynamic_agents=list(dynamic_agents),
        start_pose=start_pose,
        _static_segs=np.zeros((0, 4)),
        _pit_segs=np.vstack([geo.polygon_segments(p) for p in pits]) if pits else np.zeros((0, 4)),
        _patch_paths=patch_paths,
        _pit_paths=pit_paths,
    )
    step_segs = []
    for poly, _z in height_patches:
        es = geo.polygon_segments(poly)
        for e in es:
            mx, my = (e[0] + e[2]) / 2.0, (e[1] + e[3]) / 2.0
            dx, dy = e[2] - e[0], e[3] - e[1]
            n = np.hypot(dx, dy)
            if n < 1e-9:
                continue
            nx, ny = dy / n, -dx / n  # outward for CCW
            zin = w.ground_height(np.array([[mx - 0.01 * nx, my - 0.01 * ny]]))[0]
            zout = w.ground_height(np.array([[mx + 0.01 * nx, my + 0.01 * ny]]))[0]
            if abs(zin - zout) > STEP_EDGE_THRESH:
                step_segs.append(e)
    all_segs = segs + ([np.array(step_segs)] if step_segs else [])
    static = np.vstack(all_segs) if all_segs else np.zeros((0, 4))
    obs_segs = np.vstack(segs) if segs else np.zeros((0, 4))
    obs_paths = [MplPath(p) for p in obstacles]
    return replace(w, _static_segs=static, _obs_segs=obs_segs, _obs_paths=obs_paths)


def _validate(world: World) -> World:
    bx0, by0, bx1, by1 = world.bounds
    if not (bx0 < bx1 and by0 < by1):
        raise WorldError("bounds: min must be smaller than max")
    for name, polys in (("obstacles", world.obstacles), ("pits", world.pits)):
        for k, poly in enumerate(polys):
            if len(poly) < 3:
                raise WorldError(f"{name}[{k}]: needs >= 3 vertices")
            if not geo.is_simple_polygon(poly):
                raise WorldError(f"{name}[{k}]: self-intersecting polygon")
            if (
                poly[:, 0].min() < bx0 - 1e-9
                or poly[:, 0].max() > bx1 + 1e-9
                or poly[:, 1].min() < by0 - 1e-9
                or poly[:, 1].max() > by1 + 1e-9
            ):
                raise WorldError(f"{name}[{k}]: geometry outside bounds")
    sp = world.start_pose
    if not world.free_at(sp.x, sp.y):
        raise WorldError("start pose not in free space")
    return world


def load_world(file_contents: str) -> World:
    """Parse and validate the JSON world format."""
    try:
        data = json.loads(file_contents)
    except json.JSONDecodeError as e:
        raise WorldError(f"parse error at line {e.lineno}, col {e.colno}: {e.msg}") from e
    for key in ("bounds", "start_pose"):
        if key not in data:
            raise WorldError(f"missing required key '{key}'")
    sp = data["start_pose"]
    pose = Pose(float(sp["x"]), float(sp["y"]), 0.0, float(sp.get("heading", 0.0)))
    agents = []
    for k, a in enumerate(data.get("dynamic_agents", [])):
        try:
            agents.append(
                DynamicAgent(
                    footprint=np.asarray(a["footprint"], float),
                    path=np.asarray(a["path"], float),
                    speed=float(a["speed"]),
                )
            )
        except (KeyError, TypeError) as e:
            raise WorldError(f"dynamic_agents[{k}]: {e}") from e
    patches = []
    for k, p in enumerate(data.get("height_patches", [])):
        try:
            patches.append((np.asarray(p["polygon"], float), float(p["z"])))
        except (KeyError, TypeError) as e:
            raise WorldError(f"height_patches[{k}]: {e}") from e
    world = _finish_world(
        data["bounds"],
        data.get("obstacles", []),
        patches,
        data.get("pits", []),
        agents,
        pose,
    )
    world = _validate(world)
    z = world.ground_height(np.array([[pose.x, pose.y]]))[0]
    return replace(world, start_pose=replace(pose, z=float(z)))


def world_to_json(world: World) -> str:
    data = {
        "bounds": [float(v) for v in world.bounds],
        "obstacles": [p.tolist() for p in world.obstacles],
        "height_patches": [
            {"polygon": p.tolist(), "z": z} for p, z in world.height_patches
        ],
        "pits": [p.tolist() for p in world.pits],
        "dynamic_agents": [
            {
                "footprint": a.footprint.tolist(),
                "path": a.path.tolist(),
                "speed": a.speed,
            }
            for a in world.dynamic_agents
        ],
        "start_pose": {
            "x": world.start_pose.x,
            "y": world.start_pose.y,
            "heading": world.start_pose.heading,
        },
    }
    return json.dumps(data, indent=1)


# ---------------------------------------------------------------- generators


def _rect(x0, y0, x1, y1) -> np.ndarray:
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], float)


def _maze_walls(rng: np.random.Generator, n: int) -> set:
    """Recursive-backtracker spanning tree; returns the set of open passages
    as frozensets of adjacent cell coordinates."""
    open_edges = set()
    visited = {(0, 0)}
    stack = [(0, 0)]
    while stack:
        c = stack[-1]
        nbrs = []
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nb = (c[0] + dx, c[1] + dy)
            if 0 <= nb[0] < n and 0 <= nb[1] < n and nb not in visited:
                nbrs.append(nb)
        if not nbrs:
            stack.pop()
            continue
        nb = nbrs[int(rng.integers(len(nbrs)))]
        open_edges.add(frozenset((c, nb)))
        visited.add(nb)
        stack.append(nb)
    return open_edges


def _gen_maze(rng: np.random.Generator, size: float) -> World:
    pitch = 4.0
    th = 0.6
    n = max(3, int(size / pitch))
    size = n * pitch
    open_edges = _maze_walls(rng, n)
    # braid: open a few extra passages so the maze has loops
    cells = [(i, j) for i in range(n) for j in range(n)]
    extra = max(1, n * n // 10)
    for _ in range(extra):
        i, j = cells[int(rng.integers(len(cells)))]
        if rng.random() < 0.5 and i + 1 < n:
            open_edges.add(frozenset(((i, j), (i + 1, j))))
        elif j + 1 < n:
            open_edges.add(frozenset(((i, j), (i, j + 1))))
    obstacles = [
        _rect(-th, -th, size + th, 0),
        _rect(-th, size, size + th, size + th),
        _rect(-th, 0, 0, size),
        _rect(size, 0, size + th, size),
    ]
    for i in range(n):
        for j in range(n):
            # wall to the east of cell (i, j)
            if i + 1 < n and frozenset(((i, j), (i + 1, j))) not in open_edges:
                x = (i + 1) * pitch
                obstacles.append(_rect(x - th / 2, j * pitch - th / 2, x + th / 2, (j + 1) * pitch + th / 2))
            if j + 1 < n and frozenset(((i, j), (i, j + 1))) not in open_edges:
                y = (j + 1) * pitch
                obstacles.append(_rect(i * pitch - th / 2, y - th / 2, (i + 1) * pitch + th / 2, y + th / 2))
    start = Pose(pitch / 2, pitch / 2, 0.0, 0.0)
    return _finish_world(
        [-th, -th, size + th, size + th], obstacles, [], [], [], start
    )


def _gen_rooms(rng: np.random.Generator, size: float) -> World:
    n = max(2, int(size / 15.0))
    pitch = size / n
    th = 0.5
    door = 2.0
    open_edges = _maze_walls(rng, n)
    for _ in range(n):  # extra doors for loops
        i = int(rng.integers(n - 1)) if n > 1 else 0
        j = int(rng.integers(n))
        open_edges.add(frozenset(((i, j), (i + 1, j))))
    obstacles = [
        _rect(-th, -th, size + th, 0),
        _rect(-th, size, size + th, size + th),
        _rect(-th, 0, 0, size),
        _rect(size, 0, size + th, size),
    ]

    def wall_with_door(x0, y0, x1, y1, horizontal, has_door):
        if not has_door:
            return [_rect(x0, y0, x1, y1)]
        if horizontal:
            c = (x0 + x1) / 2 + float(rng.uniform(-pitch / 4, pitch / 4))
            return [_rect(x0, y0, c - door / 2, y1), _rect(c + door / 2, y0, x1, y1)]
        c = (y0 + y1) / 2 + float(rng.uniform(-pitch / 4, pitch / 4))
        return [_rect(x0, y0, x1, c - door / 2), _rect(x0, c + door / 2, x1, y1)]

    for i in range(n):
        for j in range(n):
            if i + 1 < n:
                x = (i + 1) * pitch
                has = frozenset(((i, j), (i + 1, j))) in open_edges
                obstacles += wall_with_door(
                    x - th / 2, j * pitch, x + th / 2, (j + 1) * pitch, False, has
                )
            if j + 1 < n:
                y = (j + 1) * pitch
                has = frozenset(((i, j), (i, j + 1))) in open_edges
                obstacles += wall_with_door(
                    i * pitch, y - th / 2, (i + 1) * pitch, y + th / 2, True, has
                )
    # clutter: boxes inside rooms, kept clear of walls and doorways
    per_room = max(2, int(pitch * pitch / 24.0))
    for i in range(n):
        for j in range(n):
            if i == 0 and j == 0:
                continue  # keep the start room open
            placed = []
            for _ in range(per_room):
                w = float(rng.uniform(1.0, 2.4))
                cx = i * pitch + float(rng.uniform(pitch * 0.22, pitch * 0.78))
                cy = j * pitch + float(rng.uniform(pitch * 0.22, pitch * 0.78))
                if any(np.hypot(cx - px, cy - py) < 1.8 + w for px, py in placed):
                    continue
                placed.append((cx, cy))
                obstacles.append(_rect(cx - w / 2, cy - w / 2, cx + w / 2, cy + w / 2))
    start = Pose(pitch / 2, pitch / 2, 0.0, 0.0)
    return _finish_world([-th, -th, size + th, size + th], obstacles, [], [], [], start)


def _gen_corridors(rng: np.random.Generator, size: float) -> World:
    pitch = 8.0
    cw = 2.5  # corridor width
    n = max(2, int(size / pitch))
    size = n * pitch
    open_edges = _maze_walls(rng, n)
    for _ in range(max(1, n * n // 8)):  # loops in the network
        i = int(rng.integers(n))
        j = int(rng.integers(n))
        if rng.random() < 0.5 and i + 1 < n:
            open_edges.add(frozenset(((i, j), (i + 1, j))))
        elif j + 1 < n:
            open_edges.add(frozenset(((i, j), (i, j + 1))))
    blk = (pitch - cw) / 2.0
    obstacles = [
        _rect(-0.5, -0.5, size + 0.5, 0),
        _rect(-0.5, size, size + 0.5, size + 0.5),
        _rect(-0.5, 0, 0, size),
        _rect(size, 0, size + 0.5, size),
    ]
    # corner blocks at every lattice corner (always solid)
    for i in range(n + 1):
        for j in range(n + 1):
            x, y = i * pitch, j * pitch
            x0, x1 = max(0.0, x - blk), min(size, x + blk)
            y0, y1 = max(0.0, y - blk), min(size, y + blk)
            if x1 > x0 and y1 > y0:
                obstacles.append(_rect(x0, y0, x1, y1))
    # edge blocks where there is no passage
    for i in range(n):
        for j in range(n):
            cx, cy = (i + 0.5) * pitch, (j + 0.5) * pitch
            if i + 1 < n and frozenset(((i, j), (i + 1, j))) not in open_edges:
                x = (i + 1) * pitch
                obstacles.append(_rect(x - blk, cy - cw / 2 - blk, x + blk, cy + cw / 2 + blk))
            if j + 1 < n and frozenset(((i, j), (i, j + 1))) not in open_edges:
                y = (j + 1) * pitch
                obstacles.append(_rect(cx - cw / 2 - blk, y - blk, cx + cw / 2 + blk, y + blk))
    start = Pose(pitch / 2, pitch / 2, 0.0, 0.0)
    return _finish_world([-0.5, -0.5, size + 0.5, size + 0.5], obstacles, [], [], [], start)


def _gen_scatter(rng: np.random.Generator, size: float) -> World:
    wall = 0.5
    count = int(0.03 * size * size)
    start = Pose(1.5, 1.5, 0.0, 0.0)
    discs = []  # (cx, cy, r)
    tries = 0
    while len(discs) < count and tries < count * 60:
        tries += 1
        r = float(rng.uniform(0.8, 1.6))
        cx = float(rng.uniform(r + 2.0, size - r - 2.0))
        cy = float(rng.uniform(r + 2.0, size - r - 2.0))
        if np.hypot(cx - start.x, cy - start.y) < r + 2.0:
            continue
        ok = True
        for ox, oy, orr in discs:
            if np.hypot(cx - ox, cy - oy) < r + orr + 1.2:
                ok = False
                break
        if ok:
            discs.append((cx, cy, r))
    obstacles = [
        _rect(-wall, -wall, size + wall, 0),
        _rect(-wall, size, size + wall, size + wall),
        _rect(-wall, 0, 0, size),
        _rect(size, 0, size + wall, size),
    ]
    ang = np.linspace(0, 2 * np.pi, 13)[:-1]
    for cx, cy, r in discs:
        obstacles.append(np.stack([cx + r * np.cos(ang), cy + r * np.sin(ang)], axis=1))
    return _finish_world([-wall, -wall, size + wall, size + wall], obstacles, [], [], [], start)


_GENERATORS = {
    "maze": _gen_maze,
    "rooms": _gen_rooms,
    "corridors": _gen_corridors,
    "scatter": _gen_scatter,
}


def free_space_raster(world: World, cell: float = 0.25):
    """(mask, origin) free-space raster; True where the cell center is free of
    static obstacles and pits."""
    bx0, by0, bx1, by1 = world.bounds
    w = int(np.ceil((bx1 - bx0) / cell))
    h = int(np.ceil((by1 - by0) / cell))
    blocked = np.zeros((h, w), dtype=bool)
    for poly in world.obstacles + world.pits:
        blocked |= geo.fill_polygon_mask(poly, bx0, by0, cell, h, w)
    return ~blocked, (bx0, by0)


def reachable_free_mask(world: World, cell: float = 0.25):
    """Flood fill of the free raster from the start pose (4-connected)."""
    from scipy.ndimage import label

    free, (ox, oy) = free_space_raster(world, cell)
    lab, _ = label(free)
    si = int((world.start_pose.y - oy) / cell)
    sj = int((world.start_pose.x - ox) / cell)
    want = lab[si, sj]
    return (lab == want), (ox, oy)


def generate_world(kind: str, seed: int, size: float) -> World:
    """Procedural world; deterministic for (kind, seed, size)."""
    if kind not in _GENERATORS:
        raise WorldError(f"unknown world kind {kind!r}")
    if not (20.0 <= size <= 200.0):
        raise WorldError("size must be in [20, 200] m")
    for attempt in range(100):
        kind_id = {"maze": 1, "rooms": 2, "corridors": 3, "scatter": 4}[kind]
        rng = np.random.default_rng([seed, attempt, kind_id])
        world = _GENERATORS[kind](rng, float(size))
        free, (ox, oy) = free_space_raster(world)
        frac = free.mean()
        if not (0.3 <= frac <= 0.9):
            continue
        reach, _ = reachable_free_mask(world)
        if reach.sum() < 0.98 * free.sum():
            continue
        if not world.free_at(world.start_pose.x, world.start_pose.y):
            continue
        return world
    raise WorldError(f"could not generate a valid {kind} world after 100 attempts")


# ---------------------------------------------------------------- dynamics


def step_vehicle(pose: Pose, cmd: CmdVel, dt: float, world: World | None = None) -> Pose:
    """Exact constant-twist integration of unicycle kinematics."""
    if not (0.0 < dt <= 0.5):
        raise ValueError("dt must be in (0, 0.5]")
    cmd = cmd.clamped()
    th = pose.heading
    if abs(cmd.omega) < 1e-9:
        x = pose.x + cmd.v * dt * np.cos(th)
        y = pose.y + cmd.v * dt * np.sin(th)
        nth = th
    else:
        r = cmd.v / cmd.omega
        nth = th + cmd.omega * dt
        x = pose.x + r * (np.sin(nth) - np.sin(th))
        y = pose.y - r * (np.cos(nth) - np.cos(th))
    z = 0.0
    if world is not None:
        z = float(world.ground_height(np.array([[x, y]]))[0])
    return Pose(float(x), float(y), z, geo.normalize_angle(float(nth)))


def step_dynamic_agents(world: World, dt: float) -> World:
    if not world.dynamic_agents:
        return world
    agents = [replace(a, progress=a.progress + a.speed * dt) for a in world.dynamic_agents]
    return replace(world, dynamic_agents=agents)


def cast_scan(
    world: World,
    sensor_pose: Pose,
    params: SensorParams,
    rng: np.random.Generator | None = None,
) -> RegisteredScan:
    """One lidar sweep. Per ray: nearest obstacle/step/agent return plus
    synthetic ground returns; rays diving into pits are dropped whole."""
    R = params.rays_per_scan
    bearings = -np.pi + 2.0 * np.pi * np.arange(R) / R
    segs = world.obstacle_segments()
    asegs = world.agent_segments()
    if len(asegs):
        segs = np.vstack([segs, asegs])
    d_obs = kernels.raycast(sensor_pose.x, sensor_pose.y, bearings, segs, params.max_range)
    d_pit = kernels.raycast(
        sensor_pose.x, sensor_pose.y, bearings, world._pit_segs, params.max_range
    )
    if params.noise_sigma > 0 and rng is not None:
        noise = rng.normal(0.0, params.noise_sigma, R)
        d_obs = np.where(np.isfinite(d_obs), np.maximum(d_obs + noise, 0.05), d_obs)

    hit = np.isfinite(d_obs) & (d_obs <= np.where(np.isfinite(d_pit), d_pit, np.inf))
    dropped = ~hit & np.isfinite(d_pit)
    term = np.where(hit, d_obs, params.max_range)

    # ground sampling: golden-ratio radial stagger fills ring gaps over time
    offsets = (bearings * 181.0) % GROUND_SAMPLE_SPACING
    cos_b, sin_b = np.cos(bearings), np.sin(bearings)
    kmax = int(params.max_range / GROUND_SAMPLE_SPACING) + 1
    ks = np.arange(kmax + 1)
    # (R, K+1) radii: ground samples per ray, then the wall return last so
    # row-major nonzero keeps each ray's points range-ordered
    rr = offsets[:, None] + ks[None, :] * GROUND_SAMPLE_SPACING
    valid = (rr > 0.3) & (rr < term[:, None] - 0.05) & (rr <= params.max_range)
    rr = np.concatenate([rr, d_obs[:, None]], axis=1)
    valid = np.concatenate([valid, hit[:, None]], axis=1)
    valid &= ~dropped[:, None]
    bidx, col = np.nonzero(valid)
    if len(bidx):
        r_sel = rr[bidx, col]
        xs = sensor_pose.x + r_sel * cos_b[bidx]
        ys = sensor_pose.y + r_sel * sin_b[bidx]
        zz = world.ground_height(np.stack([xs, ys], axis=1))
        zz[col == rr.shape[1] - 1] += WALL_RETURN_HEIGHT
        points = np.stack([xs, ys, zz], axis=1)
        bidx = bidx.astype(np.int32)
    else:
        points = np.zeros((0, 3))
        bidx = np.zeros(0, dtype=np.int32)
    # rays with no points at all count as dropped too
    has_pt = np.zeros(R, dtype=bool)
    has_pt[bidx] = True
    dropped |= ~has_pt
    clear_ranges = np.where(hit, d_obs, params.max_range)
    return RegisteredScan(
        timestamp=0.0,
        sensor_pose=sensor_pose,
        points=points,
        dropped_ray_bearings=bearings[dropped],
        bearings=bearings,
        clear_ranges=clear_ranges,
        point_bearing_idx=bidx,
    )
