"""Rolling vehicle-centered terrain cost map built from stacked scans.

Each cell carries a ground-height estimate, a traversal cost in [0, 1], and
a traversable / non-traversable / unknown status. Dynamic obstacles are
ray-trace cleared near the vehicle; persistent empty areas crossed by
dropped rays can be marked as negative obstacles.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from . import kernels
from .world import Pose, RegisteredScan

UNKNOWN, TRAVERSABLE, NON_TRAVERSABLE = 0, 1, 2

# recenter in steps of this many cells; the map keeps enough margin beyond
# sensor range that a small off-center drift costs nothing
RECENTER_SLACK_CELLS = 8


@dataclass(frozen=True)
class TerrainParams:
    map_side: float = 40.0
    cell_size: float = 0.25
    obstacle_height_thresh: float = 0.2
    cost_saturation_height: float = 0.5
    scan_window: int = 20
    clearing_radius: float = 5.0
    negative_obstacle_mode: bool = False
    negative_min_dropped_rays: int = 3

    def __post_init__(self):
        n = self.map_side / self.cell_size
        if abs(n - round(n)) > 1e-9:
            raise ValueError("map_side must be an integer multiple of cell_size")
        if self.clearing_radius > self.map_side / 2:
            raise ValueError("clearing_radius must be <= map_side/2")

    @property
    def grid_n(self) -> int:
        return int(round(self.map_side / self.cell_size))


@dataclass(frozen=True)
class TerrainSnapshot:
    """Immutable view handed to planners."""

    origin: tuple  # (x, y) of cell (0, 0) lower corner
    cell_size: float
    status: np.ndarray  # uint8, codes above
    ground: np.ndarray
    cost: np.ndarray  # -1 where unknown

    def cell_of(self, x: float, y: float):
        j = int((x - self.origin[0]) / self.cell_size)
        i = int((y - self.origin[1]) / self.cell_size)
        return i, j

    def in_grid(self, i: int, j: int) -> bool:
        return 0 <= i < self.status.shape[0] and 0 <= j < self.status.shape[1]


class TerrainMap:
    """Single-writer rolling map; snapshot() for concurrent readers."""

    def __init__(self, params: TerrainParams | None = None):
        self.params = params or TerrainParams()
        n = self.params.grid_n
        s = self.params.scan_window
        self.slot_min = np.zeros((s, n, n))
        self.slot_max = np.zeros((s, n, n))
        self.slot_cnt = np.zeros((s, n, n), dtype=np.int32)
        self.agg_min = np.zeros((n, n))
        self.agg_max = np.zeros((n, n))
        self.agg_cnt = np.zeros((n, n), dtype=np.int64)
        self.ground = np.zeros((n, n))
        self.cost = np.full((n, n), -1.0)
        self.status = np.zeros((n, n), dtype=np.uint8)
        self.neg = np.zeros((n, n), dtype=np.uint8)
        self.origin = (-self.params.map_side / 2, -self.params.map_side / 2)
        self.tick = 0

    # ------------------------------------------------------------ plumbing

    def _shift(self, di: int, dj: int):
        """Recenter by whole cells; vacated cells reset to unknown."""
        if di == 0 and dj == 0:
            return
        for arr in (
            self.slot_min,
            self.slot_max,
            self.slot_cnt,
            self.agg_min,
            self.agg_max,
            self.agg_cnt,
            self.ground,
            self.cost,
            self.status,
            self.neg,
        ):
            shifted = np.roll(arr, (-di, -dj), axis=(-2, -1))
            # zero the wrapped band
            if di > 0:
                shifted[..., -di:, :] = 0
            elif di < 0:
                shifted[..., :-di, :] = 0
            if dj > 0:
                shifted[..., :, -dj:] = 0
            elif dj < 0:
                shifted[..., :, :-dj] = 0
            arr[...] = shifted
        if di != 0:
            sel = np.s_[-di:, :] if di > 0 else np.s_[:-di, :]
            self.cost[sel] = -1.0
        if dj != 0:
            sel = np.s_[:, -dj:] if dj > 0 else np.s_[:, :-dj]
            self.cost[sel] = -1.0

    def recenter(self, pose: Pose):
        cs = self.params.cell_size
        half = self.params.map_side / 2
        want_x = np.floor((pose.x - half) / cs) * cs
        want_y = np.floor((pose.y - half) / cs) * cs
        dj = int(round((want_x - self.origin[0]) / cs))
        di = int(round((want_y - self.origin[1]) / cs))
        # shifting the slot stack is expensive; tolerate a small off-center
        # drift and move in bigger, rarer steps
        if abs(di) < RECENTER_SLACK_CELLS and abs(dj) < RECENTER_SLACK_CELLS:
            return
        self._shift(di, dj)
        self.origin = (self.origin[0] + dj * cs, self.origin[1] + di * cs)

    # ---------------------------------------------------------- operations

    def update(self, scan: RegisteredScan, pose: Pose) -> "TerrainMap":
        p = self.params
        n = p.grid_n
        self.recenter(pose)
        touched = np.zeros((n, n), dtype=np.uint8)
        if scan.points is not None and (len(scan.points) or len(scan.dropped_ray_bearings)):
            self.clear_dynamic(scan, pose, touched)
        # expire the oldest slot
        slot = self.tick % p.scan_window
        touched[self.slot_cnt[slot] > 0] = 1
        self.slot_cnt[slot] = 0
        if scan.points is not None and len(scan.points):
            kernels.bin_points(
                np.ascontiguousarray(scan.points[:, 0]),
                np.ascontiguousarray(scan.points[:, 1]),
                np.ascontiguousarray(scan.points[:, 2]),
                self.slot_min[slot],
                self.slot_max[slot],
                self.slot_cnt[slot],
                self.origin[0],
                self.origin[1],
                p.cell_size,
                touched,
            )
        kernels.aggregate_cells(
            self.slot_min, self.slot_max, self.slot_cnt, touched,
            self.agg_min, self.agg_max, self.agg_cnt,
        )
        if p.negative_obstacle_mode:
            self.mark_negative_obstacles(scan, pose, touched)
        else:
            # returns always override a stale negative mark
            touched[(self.neg == 1) & (self.agg_cnt > 0)] = 1
            self.neg[self.agg_cnt > 0] = 0
        region = np.zeros((n, n), dtype=np.uint8)
        ti, tj = np.nonzero(touched)
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                ii = np.clip(ti + di, 0, n - 1)
                jj = np.clip(tj + dj, 0, n - 1)
                region[ii, jj] = 1
        kernels.classify_cells(
            self.agg_min, self.agg_max, self.agg_cnt, self.neg, region,
            self.ground, self.cost, self.status,
            p.obstacle_height_thresh, p.cost_saturation_height,
        )
        self.tick += 1
        return self

    def clear_dynamic(self, scan: RegisteredScan, pose: Pose, touched=None) -> "TerrainMap":
        p = self.params
        if touched is None:
            touched = np.zeros((p.grid_n, p.grid_n), dtype=np.uint8)
        known = (self.status != UNKNOWN).astype(np.uint8)
        kernels.clear_dynamic_cells(
            self.slot_min, self.slot_max, self.slot_cnt,
            self.ground, known,
            scan.sensor_pose.x, scan.sensor_pose.y,
            scan.bearings, scan.clear_ranges,
            self.origin[0], self.origin[1], p.cell_size,
            pose.x, pose.y, p.clearing_radius,
            p.obstacle_height_thresh * 0.5,
            touched,
        )
        return self

    def mark_negative_obstacles(self, scan: RegisteredScan, pose: Pose, touched=None) -> "TerrainMap":
        p = self.params
        n = p.grid_n
        if touched is None:
            touched = np.zeros((n, n), dtype=np.uint8)
        if len(scan.dropped_ray_bearings) == 0:
            return self
        crossings = np.zeros((n, n), dtype=np.int64)
        max_range = float(np.max(scan.clear_ranges)) if scan.clear_ranges is not None else 15.0
        kernels.count_ray_crossings(
            scan.sensor_pose.x, scan.sensor_pose.y,
            np.ascontiguousarray(scan.dropped_ray_bearings),
            max_range,
            self.origin[0], self.origin[1], p.cell_size, crossings,
        )
        newly = (crossings >= p.negative_min_dropped_rays) & (self.agg_cnt == 0)
        touched[newly & (self.neg == 0)] = 1
        self.neg[newly] = 1
        cleared = (self.agg_cnt > 0) & (self.neg == 1)
        touched[cleared] = 1
        self.neg[cleared] = 0
        return self

    # ------------------------------------------------------------- exports

    def snapshot(self) -> TerrainSnapshot:
        return TerrainSnapshot(
            origin=self.origin,
            cell_size=self.params.cell_size,
            status=self.status.copy(),
            ground=self.ground.copy(),
            cost=self.cost.copy(),
        )

    def export_cloud(self) -> np.ndarray:
        """(m, 4) rows of (x, y, ground_z, cost) for non-unknown cells,
        row-major order."""
        ii, jj = np.nonzero(self.status != UNKNOWN)
        cs = self.params.cell_size
        x = self.origin[0] + (jj + 0.5) * cs
        y = self.origin[1] + (ii + 0.5) * cs
        return np.stack([x, y, self.ground[ii, jj], self.cost[ii, jj]], axis=1)

    def to_csv(self) -> str:
        names = {UNKNOWN: "unknown", TRAVERSABLE: "traversable", NON_TRAVERSABLE: "non_traversable"}
        buf = io.StringIO()
        buf.write("x,y,ground_z,cost,status\n")
        cs = self.params.cell_size
        n = self.params.grid_n
        for i in range(n):
            for j in range(n):
                if self.status[i, j] == UNKNOWN:
                    continue
                x = self.origin[0] + (j + 0.5) * cs
                y = self.origin[1] + (i + 0.5) * cs
                buf.write(
                    f"{x:.3f},{y:.3f},{self.ground[i, j]:.4f},"
                    f"{self.cost[i, j]:.4f},{names[self.status[i, j]]}\n"
                )
        return buf.getvalue()
