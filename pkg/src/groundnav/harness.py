"""Closed-loop executive and benchmark runner.

Wires the simulator, terrain analysis, exploration planner, route planner
and motion-primitive follower into one deterministic tick loop with
explore / goto / manual / stop modes, metrics logging, plot emission and a
line-JSON console server.
"""
from __future__ import annotations

import io
import json
import queue
import socketserver
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import explorer as ex
from . import local_planner as lp
from . import router as rt
from .terrain import NON_TRAVERSABLE, TerrainMap, TerrainParams
from .world import CmdVel, Pose, SensorParams, World, cast_scan, generate_world, load_world, step_dynamic_agents, step_vehicle

MODES = ("explore", "goto", "manual", "stop")
ARRIVAL_DIST = 0.5
REPLAN_PERIOD = 1.0  # seconds of simulated time
LOOK_AHEAD = 5.0

CSV_HEADER = (
    "tick,sim_time,x,y,heading,explored_area,travel_distance,"
    "mode,planner_runtime_ms,collisions,events"
)


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    world: dict | str  # file path or {"kind","seed","size"} generator spec
    mode_script: list = field(default_factory=lambda: [(0.0, "explore", None)])
    tick_rate: float = 10.0
    duration_limit: float = 300.0
    metrics_path: str | None = None
    rng_seed: int = 0
    planner: str = "tare"  # or "nearest_frontier"
    sensor: SensorParams = field(default_factory=SensorParams)
    terrain: TerrainParams = field(default_factory=TerrainParams)
    speed_limit: float = 2.0

    def __post_init__(self):
        if self.tick_rate <= 0:
            raise ConfigError("tick_rate must be positive")
        if self.planner not in ("tare", "nearest_frontier"):
            raise ConfigError(f"unknown planner {self.planner!r}")
        last = -np.inf
        for entry in self.mode_script:
            t, mode = entry[0], entry[1]
            if mode not in MODES:
                raise ConfigError(f"unknown mode {mode!r}")
            if mode == "goto" and (len(entry) < 3 or entry[2] is None):
                raise ConfigError("goto script entry needs a goal")
            if t is not None:
                if t < last:
                    raise ConfigError("mode_script times must be nondecreasing")
                last = t


@dataclass
class ExecutiveState:
    active_mode: str = "stop"
    goal: tuple | None = None
    path: list = field(default_factory=list)
    manual_twist: tuple = (0.0, 0.0)
    paused: bool = False
    script_idx: int = 0
    next_replan: float = 0.0
    route: list | None = None
    done: bool = False
    console_control: bool = False
    commit_dir: float | None = None  # world-frame rotation target
    commit_miss: int = 0
    prev_commit: tuple | None = None  # committed viewpoint at last replan
    path_best: float = np.inf  # shortest remaining length seen on kept path
    path_stall: int = 0  # replans in a row without progress on kept path


class MetricsLog:
    def __init__(self):
        self.rows = []

    def append(self, row):
        self.rows.append(row)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for r in self.rows:
            buf.write(
                f"{r['tick']},{r['sim_time']:.3f},{r['x']:.6f},{r['y']:.6f},"
                f"{r['heading']:.6f},{r['explored_area']:.4f},"
                f"{r['travel_distance']:.6f},{r['mode']},"
                f"{r['planner_runtime_ms']:.3f},{r['collisions']},{r['events']}\n"
            )
        return buf.getvalue()

    @property
    def last(self):
        return self.rows[-1] if self.rows else None


class _GroundTruthBarrier:
    """Stands in for the world while planners run; any touch is recorded
    and refused."""

    def __init__(self):
        object.__setattr__(self, "accesses", 0)

    def __getattr__(self, name):
        object.__setattr__(self, "accesses", self.accesses + 1)
        raise RuntimeError("planners must not read simulator ground truth")


def _resolve_world(spec) -> World:
    if isinstance(spec, World):
        return spec
    if isinstance(spec, str):
        with open(spec) as fh:
            return load_world(fh.read())
    if isinstance(spec, dict):
        return generate_world(
            spec.get("kind", "maze"), int(spec.get("seed", 0)),
            float(spec.get("size", 50.0)),
        )
    raise ConfigError("world must be a path, generator spec, or World")


class Simulation:
    """Deterministic closed-loop run; one call to tick() per control step."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.world = _resolve_world(config.world)
        self.dt = 1.0 / config.tick_rate
        self.pose = self.world.start_pose
        self.tick_no = 0
        self.sim_time = 0.0
        self.state = ExecutiveState()
        self.metrics = MetricsLog()
        self.rng = np.random.default_rng(config.rng_seed)
        self.tmap = TerrainMap(config.terrain)
        self.cov = ex.CoverageModel(ex.ExplorerParams(
            bounds=self.world.bounds, rng_seed=config.rng_seed,
        ))
        self.lib, self.table = lp.get_library()
        self.vgraph = rt.VisibilityGraph()
        self.travel = 0.0
        self.collisions = 0
        self.explored = 0.0
        self.ground_truth_accesses = 0
        self.finished = False
        self.barrier = _GroundTruthBarrier()

    # ------------------------------------------------------------ scripting

    def _apply_script(self, events):
        script = self.config.mode_script
        st = self.state
        while st.script_idx < len(script):
            entry = script[st.script_idx]
            t = entry[0]
            if t is None or t > self.sim_time + 1e-9:
                break
            self._enter_mode(entry, events)
            st.script_idx += 1

    def _enter_mode(self, entry, events):
        mode = entry[1]
        goal = entry[2] if len(entry) > 2 else None
        st = self.state
        st.active_mode = mode
        st.goal = tuple(goal) if goal is not None else None
        st.path = []
        st.route = None
        st.next_replan = self.sim_time
        st.commit_dir = None
        st.commit_miss = 0
        events.append(f"mode:{mode}")

    def _pending_event_entry(self):
        script = self.config.mode_script
        idx = self.state.script_idx
        if idx < len(script) and script[idx][0] is None:
            return script[idx]
        return None

    def _on_arrival(self, events):
        events.append("goal_reached")
        pending = self._pending_event_entry()
        if pending is not None:
            self._enter_mode(pending, events)
            self.state.script_idx += 1
        else:
            self.state.active_mode = "stop"
            events.append("mode:stop")

    # ------------------------------------------------------------- planning

    def executive_step(self, snapshot, scan, events):
        """Mode logic; returns a WaypointCmd, a CmdVel, or None (stop)."""
        st = self.state
        if st.active_mode == "manual":
            v, om = st.manual_twist
            return CmdVel(v, om).clamped()
        if st.active_mode == "stop":
            return None
        if st.active_mode == "explore":
            return self._explore_step(snapshot, scan, events)
        if st.active_mode == "goto":
            return self._goto_step(snapshot, events)
        return None

    def _explore_step(self, snapshot, scan, events):
        st = self.state
        ex.update_coverage(self.cov, snapshot, self.pose, scan)
        arrived = self._consume_path()
        if self.sim_time >= st.next_replan - 1e-9 or arrived or not st.path:
            st.next_replan = self.sim_time + REPLAN_PERIOD
            if self.config.planner == "tare":
                prev_commit = st.prev_commit
                plan = ex.plan_exploration(self.cov, snapshot, self.pose, self.rng)
                st.done = plan.done
                new_commit = self.cov.commit_vp
                # route hysteresis: while the committed viewpoint stands,
                # keep the path already being driven. Fresh plans around an
                # obstacle flip between near-equal-cost sides as the pose
                # drifts, and adopting each flip dithers the vehicle at the
                # fork instead of rounding either side. A progress monitor
                # breaks the keep when the kept path stops paying off, so a
                # stale path can never pin the vehicle in place
                keep = (
                    not st.done and st.path
                    and prev_commit is not None and new_commit is not None
                    and np.hypot(prev_commit[0] - new_commit[0],
                                 prev_commit[1] - new_commit[1]) < 1e-9
                    and self._path_still_open(st.path)
                )
                if keep:
                    rem = self._remaining_length(st.path)
                    if rem < st.path_best - 0.3:
                        st.path_best = rem
                        st.path_stall = 0
                    else:
                        st.path_stall += 1
                        if st.path_stall > 5:
                            keep = False
                if not keep:
                    st.path = list(plan.waypoints)
                    st.path_best = self._remaining_length(st.path)
                    st.path_stall = 0
                st.prev_commit = new_commit
            else:
                wp = baseline_nearest_frontier(self.cov, self.pose)
                if wp is None:
                    st.path = []
                    st.done = True
                else:
                    st.path = wp
                    st.done = False
            self._consume_path()
        if st.done:
            events.append("done")
            return None
        if not st.path:
            return None
        # steer only along the leg up to the committed viewpoint: the tour
        # often doubles back after visiting it, and a look-ahead ranging past
        # the spur tip would hand the follower a carrot pointing backwards
        path = st.path
        final = False
        target = self.cov.commit_vp
        if target is not None:
            pts = np.asarray(path, dtype=float)
            d = np.hypot(pts[:, 0] - target[0], pts[:, 1] - target[1])
            k = int(d.argmin())
            if d[k] < 0.5:
                path = path[: k + 1]
                final = True
        return lp.prepare_waypoint(
            path, self.pose, LOOK_AHEAD, self.lib.params.horizon,
            is_final=final, terrain_snapshot=snapshot,
            speed_limit=self.config.speed_limit,
        )

    def _goto_step(self, snapshot, events):
        st = self.state
        goal = st.goal
        dist = np.hypot(goal[0] - self.pose.x, goal[1] - self.pose.y)
        if dist <= ARRIVAL_DIST:
            self._on_arrival(events)
            return None
        if self.sim_time >= st.next_replan - 1e-9 or st.route is None:
            st.next_replan = self.sim_time + REPLAN_PERIOD
            polys = rt.extract_polygons(snapshot, tick=self.tick_no)
            changed = rt.merge_polygons(self.vgraph, polys, tick=self.tick_no)
            rt.rebuild_vgraph(self.vgraph, changed if self.vgraph.edges or changed else None)
            self.vgraph.set_terrain(snapshot)
            query = rt.RouteQuery(
                (self.pose.x, self.pose.y), goal, mode=rt.UNKNOWN_MODE,
            )
            if st.route is None:
                out = rt.plan_route(self.vgraph, query)
                if out == rt.UNREACHABLE:
                    events.append("unreachable")
                    st.active_mode = "stop"
                    events.append("mode:stop")
                    return None
                st.route, _ = out
                events.append("route")
            else:
                verdict, out = rt.monitor_and_replan(self.vgraph, st.route, query)
                if verdict == "unreachable":
                    events.append("unreachable")
                    st.active_mode = "stop"
                    events.append("mode:stop")
                    return None
                if verdict == "new":
                    st.route = out[0]
                    events.append("route")
            st.path = list(st.route)
            self._consume_path()
        self._consume_path()
        if not st.path:
            st.path = [goal]
        return lp.prepare_waypoint(
            st.path, self.pose, LOOK_AHEAD, self.lib.params.horizon,
            is_final=True, terrain_snapshot=snapshot,
            speed_limit=self.config.speed_limit,
        )

    def _path_still_open(self, path, limit: int = 40) -> bool:
        """True while no kept-path point ahead has turned into a wall."""
        cov = self.cov
        for x, y in path[:limit]:
            i, j = cov.cell_of(x, y)
            if 0 <= i < cov.ny and 0 <= j < cov.nx:
                if cov.status[i, j] == NON_TRAVERSABLE:
                    return False
        return True

    def _remaining_length(self, path) -> float:
        """Vehicle-to-end length of a path, for progress monitoring."""
        if not path:
            return 0.0
        pts = np.asarray(path, dtype=float)
        d = float(np.hypot(pts[0, 0] - self.pose.x, pts[0, 1] - self.pose.y))
        if len(pts) > 1:
            d += float(np.hypot(np.diff(pts[:, 0]), np.diff(pts[:, 1])).sum())
        return d

    def _consume_path(self) -> bool:
        """Drop path points already reached; True if one was consumed."""
        st = self.state
        consumed = False
        while st.path:
            d = np.hypot(st.path[0][0] - self.pose.x, st.path[0][1] - self.pose.y)
            if d < ARRIVAL_DIST and len(st.path) > 1:
                st.path.pop(0)
                consumed = True
            elif d < ARRIVAL_DIST and len(st.path) == 1:
                st.path.pop(0)
                consumed = True
                break
            else:
                break
        return consumed

    # ----------------------------------------------------------------- tick

    def tick(self):
        if self.finished:
            return []
        events = []
        cfg = self.config
        step_dynamic_agents(self.world, self.dt)
        scan = cast_scan(self.world, self.pose, cfg.sensor)
        self.tmap.update(scan, self.pose)
        snapshot = self.tmap.snapshot()
        self._apply_script(events)
        t0 = time.perf_counter()
        # planners only ever see snapshots, scans and the pose
        real_world = self.world
        self.world = self.barrier
        try:
            action = self.executive_step(snapshot, scan, events)
            cmd = self._follow(action, snapshot)
        finally:
            self.world = real_world
            self.ground_truth_accesses = self.barrier.accesses
        runtime_ms = (time.perf_counter() - t0) * 1000.0
        old = self.pose
        if cmd.v != 0.0 or cmd.omega != 0.0:
            self.pose = step_vehicle(self.pose, cmd, self.dt, self.world)
        self.travel += float(np.hypot(self.pose.x - old.x, self.pose.y - old.y))
        if self.world.collides(self.pose.x, self.pose.y):
            self.collisions += 1
            events.append("collision")
        if self.state.active_mode == "explore":
            self.explored = max(self.explored, self.cov.explored_area())
        self.tick_no += 1
        self.sim_time += self.dt
        self.metrics.append({
            "tick": self.tick_no,
            "sim_time": self.sim_time,
            "x": self.pose.x,
            "y": self.pose.y,
            "heading": self.pose.heading,
            "explored_area": self.explored,
            "travel_distance": self.travel,
            "mode": self.state.active_mode,
            "planner_runtime_ms": runtime_ms,
            "collisions": self.collisions,
            "events": "|".join(events),
        })
        if self.sim_time >= cfg.duration_limit - 1e-9:
            self.finished = True
        if not self.state.console_control and self._script_exhausted():
            if self.state.done and self.state.active_mode == "explore":
                self.finished = True
            if self.state.active_mode == "stop":
                self.finished = True
        return events

    def _script_exhausted(self) -> bool:
        return self.state.script_idx >= len(self.config.mode_script)

    def _follow(self, action, snapshot) -> CmdVel:
        """Run the motion-primitive pipeline on a WaypointCmd."""
        if action is None:
            return CmdVel(0.0, 0.0)
        if isinstance(action, CmdVel):
            return action
        wp = action
        c, s = np.cos(self.pose.heading), np.sin(self.pose.heading)
        dx = wp.waypoint[0] - self.pose.x
        dy = wp.waypoint[1] - self.pose.y
        local_wp = (c * dx + s * dy, -s * dx + c * dy)
        crop = self._nearby_obstacle_points(snapshot)
        # retry at shrinking arc scales so tight pockets stay escapable
        headings = self.lib.group_headings[self.lib.group_of]
        st = self.state
        bearing = float(np.arctan2(local_wp[1], local_wp[0]))
        fallback_pick = None
        for scale in (1.0, 0.6, 0.35):
            mask = lp.find_blocked(
                self.table, crop, self.lib.n, scale=scale,
                waypoint_dist=float(np.hypot(*local_wp)), is_final=wp.is_final,
                headings=headings,
            )
            group = lp.select_group(self.lib, mask, local_wp)
            if group is None:
                continue
            if fallback_pick is None:
                fallback_pick = (scale, mask, group)
            off = abs(lp.angdiff(self.lib.group_headings[group], bearing))
            if off > np.pi / 2 and scale != 0.35:
                # the only free directions here point away from the
                # waypoint; a tighter arc scale may open the direct one, and
                # stopping at this scale leaves the vehicle rocking in place
                continue
            if off > np.pi / 2 and fallback_pick is not None:
                scale, mask, group = fallback_pick
            # rotation targets flip between ticks when marginal obstacle
            # cells quantize differently with heading; commit to one world
            # direction until aligned or it stays blocked for a while
            if st.commit_dir is not None:
                rel = lp.angdiff(st.commit_dir, self.pose.heading)
                cg = int(np.argmin(np.abs(
                    [lp.angdiff(h, rel) for h in self.lib.group_headings]
                )))
                cg_free = (mask[self.lib.group_of == cg] == 0).any()
                if cg_free:
                    st.commit_miss = 0
                    group = cg
                    if abs(rel) < 0.15:
                        st.commit_dir = None
                else:
                    st.commit_miss += 1
                    if st.commit_miss > 4:
                        st.commit_dir = None
                        st.commit_miss = 0
                    else:
                        # keep turning toward the committed direction even
                        # through marginal blocked ticks; yielding to the
                        # regular selection here rocks the vehicle in place
                        omega = float(np.clip(2.0 * rel, -1.5, 1.5))
                        return CmdVel(0.0, omega).clamped()
            cmd = lp.compute_cmd(self.lib, group, mask, wp, self.pose)
            if cmd.v == 0.0 and cmd.omega != 0.0 and st.commit_dir is None:
                st.commit_dir = float(lp.normalize_angle(
                    self.lib.group_headings[group] + self.pose.heading
                ))
                st.commit_miss = 0
            return CmdVel(cmd.v * scale, cmd.omega).clamped()
        if fallback_pick is not None:
            scale, mask, group = fallback_pick
            cmd = lp.compute_cmd(self.lib, group, mask, wp, self.pose)
            return CmdVel(cmd.v * scale, cmd.omega).clamped()
        return lp.compute_cmd(self.lib, None, mask, wp, self.pose)

    def _nearby_obstacle_points(self, snapshot) -> np.ndarray:
        """Vehicle-frame centers of non-traversable cells within the
        primitive table's reach."""
        reach = 2 * self.lib.params.horizon
        cs = snapshot.cell_size
        i0, j0 = snapshot.cell_of(self.pose.x - reach, self.pose.y - reach)
        i1, j1 = snapshot.cell_of(self.pose.x + reach, self.pose.y + reach)
        i0 = max(i0, 0); j0 = max(j0, 0)
        i1 = min(i1 + 1, snapshot.status.shape[0])
        j1 = min(j1 + 1, snapshot.status.shape[1])
        sub = snapshot.status[i0:i1, j0:j1]
        ii, jj = np.nonzero(sub == NON_TRAVERSABLE)
        if len(ii) == 0:
            return np.empty((0, 2))
        wx = snapshot.origin[0] + (jj + j0 + 0.5) * cs
        wy = snapshot.origin[1] + (ii + i0 + 0.5) * cs
        c, s = np.cos(self.pose.heading), np.sin(self.pose.heading)
        dx = wx - self.pose.x
        dy = wy - self.pose.y
        return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=1)


def run_scenario(config: ScenarioConfig) -> MetricsLog:
    sim = Simulation(config)
    while not sim.finished:
        sim.tick()
    if config.metrics_path:
        with open(config.metrics_path, "w") as fh:
            fh.write(sim.metrics.to_csv())
    return sim.metrics


def baseline_nearest_frontier(cov: ex.CoverageModel, pose: Pose):
    """Grid path to the closest still-uncovered frontier cell, or None."""
    from . import kernels

    frontier = cov.frontier_mask() & (cov.seen == 0)
    targets = np.argwhere(frontier)
    if len(targets) == 0:
        return None
    vi, vj = cov.cell_of(pose.x, pose.y)
    vi = min(max(vi, 0), cov.ny - 1)
    vj = min(max(vj, 0), cov.nx - 1)
    passable = ex.passable_mask(cov.status, cov.params.cell_size, seed=(vi, vj))
    dist, parent = kernels.grid_dijkstra(passable, vi, vj)
    best = None
    for ti, tj in targets:
        # approach cell: cheapest traversable neighbor of the frontier cell
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                ni, nj = ti + di, tj + dj
                if not (0 <= ni < cov.ny and 0 <= nj < cov.nx):
                    continue
                d = dist[ni, nj]
                if not np.isfinite(d):
                    continue
                key = (d, ti * cov.nx + tj, ni * cov.nx + nj)
                if best is None or key < best:
                    best = key
    if best is None:
        return None
    _, _, flat = best
    cells = ex._grid_path(parent, cov.nx, flat // cov.nx, flat % cov.nx)
    return [cov.cell_center(ci, cj) for ci, cj in cells]


# ------------------------------------------------------------------- plots


def emit_plots(metrics: MetricsLog, out_prefix: str):
    """Write explored-area, travel-distance and runtime-histogram SVGs."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t = [r["sim_time"] for r in metrics.rows]
    files = []
    for key, ylabel, suffix in [
        ("explored_area", "explored area (m^2)", "area"),
        ("travel_distance", "travel distance (m)", "distance"),
    ]:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        if t:
            ax.plot(t, [r[key] for r in metrics.rows])
        ax.set_xlabel("simulated time (s)")
        ax.set_ylabel(ylabel)
        fig.tight_layout()
        path = f"{out_prefix}_{suffix}.svg"
        fig.savefig(path)
        plt.close(fig)
        files.append(path)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    if t:
        ax.hist([r["planner_runtime_ms"] for r in metrics.rows], bins=30)
    ax.set_xlabel("planner runtime (ms)")
    ax.set_ylabel("ticks")
    fig.tight_layout()
    path = f"{out_prefix}_runtime.svg"
    fig.savefig(path)
    plt.close(fig)
    files.append(path)
    return files


# ----------------------------------------------------------- wire protocol


def rle_encode(grid: np.ndarray) -> list:
    """Row-major [value, count, value, count, ...]."""
    flat = np.asarray(grid, dtype=np.uint8).ravel()
    if len(flat) == 0:
        return []
    change = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [len(flat)]])
    out = []
    for s, e in zip(starts, ends):
        out.extend([int(flat[s]), int(e - s)])
    return out


def rle_decode(rle: list, n: int) -> np.ndarray:
    out = np.empty(n, dtype=np.uint8)
    pos = 0
    for k in range(0, len(rle), 2):
        v, c = rle[k], rle[k + 1]
        out[pos : pos + c] = v
        pos += c
    if pos != n:
        raise ValueError("rle length mismatch")
    return out


def snapshot_frame(sim: Simulation) -> dict:
    cov = sim.cov
    polys = [p.vertices.round(3).tolist() for p in rt.self_polys_sorted(sim.vgraph)]
    edges = [
        [list(np.round(sim.vgraph.node_pos(a), 3)), list(np.round(sim.vgraph.node_pos(b), 3))]
        for a, b in sim.vgraph.edges
    ]
    last = sim.metrics.last or {}
    return {
        "t": "snap",
        "tick": sim.tick_no,
        "pose": [round(sim.pose.x, 4), round(sim.pose.y, 4),
                 round(sim.pose.heading, 4)],
        "mode": sim.state.active_mode,
        "grid": {
            "origin": [cov.origin[0], cov.origin[1]],
            "cell": cov.params.cell_size,
            "w": cov.nx,
            "h": cov.ny,
            "rle": rle_encode(cov.status),
        },
        "polygons": polys,
        "path": [[round(x, 3), round(y, 3)] for x, y in sim.state.path[:200]],
        "vgraph_edges": edges[:500],
        "metrics": {
            "explored_area": round(sim.explored, 3),
            "travel_distance": round(sim.travel, 3),
            "collisions": sim.collisions,
            "sim_time": round(sim.sim_time, 3),
        },
    }


def apply_command(sim: Simulation, cmd: dict, events: list | None = None):
    """Apply one console command at a tick boundary."""
    kind = cmd.get("kind")
    st = sim.state
    if kind == "set_mode":
        mode = cmd.get("mode")
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        entry = (None, mode, cmd.get("goal") or st.goal)
        if mode == "goto" and entry[2] is None:
            raise ValueError("goto needs a goal")
        sim._enter_mode(entry, events if events is not None else [])
        st.console_control = True
        sim.finished = False
    elif kind == "set_goal":
        st.goal = (float(cmd["x"]), float(cmd["y"]))
        st.route = None
        st.path = []
        st.next_replan = sim.sim_time
    elif kind == "set_speed":
        v = float(cmd["v"])
        if not (0 < v <= CmdVel.V_MAX):
            raise ValueError("speed out of range")
        sim.config.speed_limit = v
    elif kind == "twist":
        st.manual_twist = (float(cmd["v"]), float(cmd["omega"]))
    elif kind == "pause":
        st.paused = bool(cmd.get("on", True))
    elif kind == "step":
        sim.tick()
    elif kind == "toggle_layer":
        pass  # render-side concern; accepted for protocol compatibility
    else:
        raise ValueError(f"unknown command {kind!r}")


class ConsoleServer:
    """Newline-JSON TCP server streaming snapshots at the tick rate."""

    def __init__(self, sim: Simulation, host="127.0.0.1", port=0):
        self.sim = sim
        self.commands: queue.Queue = queue.Queue()
        self.clients: list = []
        self._lock = threading.Lock()
        self._stop = threading.Event()
        outer = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                with outer._lock:
                    outer.clients.append(self.wfile)
                try:
                    for raw in self.rfile:
                        line = raw.strip()
                        if not line:
                            continue
                        try:
                            msg = json.loads(line)
                            if msg.get("t") != "cmd":
                                raise ValueError("expected cmd frame")
                            outer.commands.put(msg)
                        except Exception as err:  # malformed input keeps session
                            self._send({"t": "err", "msg": str(err)})
                finally:
                    with outer._lock:
                        if self.wfile in outer.clients:
                            outer.clients.remove(self.wfile)

            def _send(self, obj):
                try:
                    self.wfile.write((json.dumps(obj) + "\n").encode())
                    self.wfile.flush()
                except OSError:
                    pass

        self.server = socketserver.ThreadingTCPServer((host, port), Handler)
        self.server.daemon_threads = True
        self.port = self.server.server_address[1]
        self._threads = []

    def start(self, realtime=True):
        t1 = threading.Thread(target=self.server.serve_forever, daemon=True)
        t1.start()
        t2 = threading.Thread(target=self._loop, args=(realtime,), daemon=True)
        t2.start()
        self._threads = [t1, t2]
        return self

    def _loop(self, realtime):
        dt = self.sim.dt
        while not self._stop.is_set():
            t0 = time.perf_counter()
            while True:
                try:
                    cmd = self.commands.get_nowait()
                except queue.Empty:
                    break
                try:
                    apply_command(self.sim, cmd)
                except Exception as err:
                    self._broadcast({"t": "err", "msg": str(err)})
            if not self.sim.state.paused and not self.sim.finished:
                self.sim.tick()
            self._broadcast(snapshot_frame(self.sim))
            if realtime:
                lag = dt - (time.perf_counter() - t0)
                if lag > 0:
                    time.sleep(lag)

    def _broadcast(self, obj):
        data = (json.dumps(obj) + "\n").encode()
        with self._lock:
            dead = []
            for wf in self.clients:
                try:
                    wf.write(data)
                    wf.flush()
                except OSError:
                    dead.append(wf)
            for wf in dead:
                self.clients.remove(wf)

    def stop(self):
        self._stop.set()
        self.server.shutdown()
        self.server.server_close()


def serve_console(config: ScenarioConfig, host="127.0.0.1", port=0,
                  realtime=True) -> ConsoleServer:
    sim = Simulation(config)
    return ConsoleServer(sim, host, port).start(realtime=realtime)
