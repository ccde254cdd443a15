import time

import numpy as np
import pytest

from groundnav import local_planner as lp
from groundnav.terrain import NON_TRAVERSABLE, TRAVERSABLE, TerrainSnapshot
from groundnav.world import CmdVel, Pose


@pytest.fixture(scope="module")
def lib_table():
    return lp.get_library()


def snapshot_from_status(status, origin=(-20.0, -20.0), cell=0.25):
    status = np.asarray(status, dtype=np.uint8)
    return TerrainSnapshot(
        origin=origin,
        cell_size=cell,
        status=status,
        ground=np.zeros_like(status, dtype=float),
        cost=np.zeros_like(status, dtype=float),
    )


def brute_force_blocked(lib, pts, radius):
    mask = np.zeros(lib.n, dtype=bool)
    for prim in lib.primitives:
        d = lp._dist_points_polyline(np.asarray(pts, float), prim.poses[:, :2])
        if (d <= radius).any():
            mask[prim.id] = True
    return mask


# ------------------------------------------------------------------ library


def test_library_shape(lib_table):
    lib, table = lib_table
    assert lib.n == 36 * 7
    ids = sorted(p.id for p in lib.primitives)
    assert ids == list(range(252))
    for prim in lib.primitives:
        assert np.allclose(prim.poses[0], [0, 0, 0])


def test_endpoint_distances(lib_table):
    lib, _ = lib_table
    h = lib.params.horizon
    for prim in lib.primitives:
        d = np.hypot(prim.poses[-1, 0], prim.poses[-1, 1])
        assert h - 0.2 <= d <= h + 0.2, prim.id


def test_pose_spacing(lib_table):
    lib, _ = lib_table
    step = lib.params.path_step
    for prim in lib.primitives:
        gaps = np.hypot(*np.diff(prim.poses[:, :2], axis=0).T)
        assert (gaps <= step + 1e-9).all()
        # cumulative chord length close to the horizon
        assert gaps.sum() == pytest.approx(lib.params.horizon, abs=0.05)


def test_library_deterministic():
    a, _ = lp.build_library(lp.PrimitiveLibraryParams(rng_seed=3))
    b, _ = lp.build_library(lp.PrimitiveLibraryParams(rng_seed=3))
    for pa, pb in zip(a.primitives, b.primitives):
        assert np.array_equal(pa.poses, pb.poses)


def test_params_validation():
    with pytest.raises(ValueError):
        lp.PrimitiveLibraryParams(horizon=0)
    with pytest.raises(ValueError):
        lp.PrimitiveLibraryParams(groups=1000, primitives_per_group=100)


def test_every_primitive_in_table(lib_table):
    lib, table = lib_table
    present = np.zeros(lib.n, dtype=bool)
    present[table.ids] = True
    assert present.all()


def test_table_matches_brute_force(lib_table):
    lib, table = lib_table
    rng = np.random.default_rng(9)
    thresh = lib.params.vehicle_radius + table.cell * np.sqrt(2) / 2
    centers = {p.id: p.poses[:, :2] for p in lib.primitives}
    for _ in range(1000):
        i = int(rng.integers(0, table.n))
        j = int(rng.integers(0, table.n))
        pid = int(rng.integers(0, lib.n))
        cx = table.origin + (j + 0.5) * table.cell
        cy = table.origin + (i + 0.5) * table.cell
        want = lp._dist_points_polyline(
            np.array([[cx, cy]]), centers[pid]
        )[0] <= thresh
        flat = i * table.n + j
        got = pid in table.ids[table.cell_start[flat] : table.cell_start[flat + 1]]
        assert got == want, (i, j, pid)


# ------------------------------------------------------------- find_blocked


def test_no_points_empty_mask(lib_table):
    lib, table = lib_table
    mask = lp.find_blocked(table, np.empty((0, 2)), lib.n)
    assert mask.sum() == 0


def test_far_point_empty_mask(lib_table):
    lib, table = lib_table
    mask = lp.find_blocked(table, np.array([[10.0, 0.0]]), lib.n)
    assert mask.sum() == 0


def test_single_point_superset_of_exact(lib_table):
    # table blocking must cover every primitive passing within the vehicle
    # radius of the point, and nothing far from it
    lib, table = lib_table
    pt = np.array([[1.0, 0.0]])
    mask = lp.find_blocked(table, pt, lib.n).astype(bool)
    exact = brute_force_blocked(lib, pt, lib.params.vehicle_radius)
    assert (mask | ~exact).all()  # exact ⊆ table mask
    slack = lib.params.vehicle_radius + table.cell * np.sqrt(2)
    loose = brute_force_blocked(lib, pt, slack)
    assert (loose | ~mask).all()  # table mask ⊆ slightly inflated exact


def test_beyond_waypoint_ignored_when_final(lib_table):
    lib, table = lib_table
    pt = np.array([[3.0, 0.0]])
    hit = lp.find_blocked(table, pt, lib.n)
    assert hit.sum() > 0
    final = lp.find_blocked(table, pt, lib.n, waypoint_dist=2.0, is_final=True)
    assert final.sum() == 0


def test_terrain_cells_as_obstacles(lib_table):
    lib, table = lib_table
    status = np.full((160, 160), TRAVERSABLE, dtype=np.uint8)
    snap = snapshot_from_status(status)
    i, j = snap.cell_of(2.0, 0.0)
    status[i, j] = NON_TRAVERSABLE
    pose = Pose(0, 0, 0, 0)
    mask = lp.find_blocked(table, np.empty((0, 2)), lib.n,
                           terrain_snapshot=snap, vehicle_pose=pose)
    exact = brute_force_blocked(
        lib, np.array([[2.125, 0.125]]), lib.params.vehicle_radius
    )
    assert (mask.astype(bool) | ~exact).all()
    assert mask.sum() > 0


def test_terrain_cells_rotated_frame(lib_table):
    # wall ahead of a vehicle heading +y must block forward (group 0) prims
    lib, table = lib_table
    status = np.full((160, 160), TRAVERSABLE, dtype=np.uint8)
    snap = snapshot_from_status(status)
    for x in np.arange(-2, 2, 0.25):
        i, j = snap.cell_of(x, 2.0)
        status[i, j] = NON_TRAVERSABLE
    pose = Pose(0, 0, 0, np.pi / 2)
    mask = lp.find_blocked(table, np.empty((0, 2)), lib.n,
                           terrain_snapshot=snap, vehicle_pose=pose)
    group0 = np.flatnonzero(lib.group_of == 0)
    assert mask[group0].all()


# ------------------------------------------------------------- select_group


def test_select_group_empty_mask(lib_table):
    lib, _ = lib_table
    g = lp.select_group(lib, np.zeros(lib.n, dtype=np.uint8), (5.0, 0.0))
    assert g == 0  # heading-0 group


def test_select_group_all_blocked(lib_table):
    lib, _ = lib_table
    g = lp.select_group(lib, np.ones(lib.n, dtype=np.uint8), (5.0, 0.0))
    assert g is None


def score_oracle(lib, blocked, waypoint):
    bearing = np.arctan2(waypoint[1], waypoint[0])
    best = None
    for g in range(lib.params.groups):
        members = np.flatnonzero(lib.group_of == g)
        free = int((blocked[members] == 0).sum())
        if free == 0:
            continue
        ad = abs(lp.angdiff(lib.group_headings[g], bearing))
        s = (free / lib.params.primitives_per_group) * np.exp(-ad / 0.5)
        key = (-s, ad, g)
        if best is None or key < best[0]:
            best = (key, g)
    return None if best is None else best[1]


def test_select_group_wall_matches_oracle(lib_table):
    lib, _ = lib_table
    rng = np.random.default_rng(4)
    for trial in range(50):
        blocked = np.zeros(lib.n, dtype=np.uint8)
        # block all groups within a random angular window
        center = rng.uniform(-np.pi, np.pi)
        width = rng.uniform(0.3, 2.0)
        for g in range(lib.params.groups):
            if abs(lp.angdiff(lib.group_headings[g], center)) < width:
                blocked[lib.group_of == g] = 1
        # plus some random primitive-level blocks
        blocked[rng.integers(0, lib.n, 30)] = 1
        wp = (float(np.cos(center) * 5), float(np.sin(center) * 5))
        got = lp.select_group(lib, blocked, wp)
        want = score_oracle(lib, blocked, wp)
        assert got == want, trial


def test_select_group_prefers_small_heading(lib_table):
    lib, _ = lib_table
    blocked = np.zeros(lib.n, dtype=np.uint8)
    for g in range(lib.params.groups):
        if abs(lp.angdiff(lib.group_headings[g], 0.0)) <= np.deg2rad(30) + 1e-9:
            blocked[lib.group_of == g] = 1
    got = lp.select_group(lib, blocked, (5.0, 0.0))
    assert got == score_oracle(lib, blocked, (5.0, 0.0))
    assert abs(lp.angdiff(lib.group_headings[got], 0.0)) == pytest.approx(
        np.deg2rad(40), abs=1e-9
    )


# -------------------------------------------------------- prepare_waypoint


def test_projection_to_horizon():
    path = [(2.0, 0.0)]
    cmd = lp.prepare_waypoint(path, Pose(0, 0, 0, 0), 5.0, 3.75, is_final=False)
    assert cmd.waypoint[0] == pytest.approx(3.75)
    assert cmd.waypoint[1] == pytest.approx(0.0, abs=1e-9)
    assert not cmd.is_final


def test_projection_preserves_bearing():
    rng = np.random.default_rng(2)
    for _ in range(50):
        pt = rng.uniform(-3, 3, 2)
        if np.hypot(*pt) < 0.1:
            continue
        pose = Pose(*rng.uniform(-1, 1, 2), 0.0, rng.uniform(-np.pi, np.pi))
        cmd = lp.prepare_waypoint([tuple(pt)], pose, 10.0, 3.75, is_final=False)
        b0 = np.arctan2(pt[1] - pose.y, pt[0] - pose.x)
        b1 = np.arctan2(cmd.waypoint[1] - pose.y, cmd.waypoint[0] - pose.x)
        assert abs(lp.angdiff(b0, b1)) < 1e-9


def test_final_goal_unprojected():
    cmd = lp.prepare_waypoint([(1.0, 0.0)], Pose(0, 0, 0, 0), 5.0, 3.75,
                              is_final=True)
    assert cmd.waypoint == (1.0, 0.0)
    assert cmd.is_final


def test_farthest_los_point_chosen():
    status = np.full((160, 160), TRAVERSABLE, dtype=np.uint8)
    snap = snapshot_from_status(status)
    # wall at x = 3 blocking sight past it, gap nowhere
    for y in np.arange(-5, 5, 0.25):
        i, j = snap.cell_of(3.0, y)
        status[i, j] = NON_TRAVERSABLE
    path = [(1.0, 0.0), (2.0, 0.0), (2.5, 0.0), (5.0, 0.0), (6.0, 0.0)]
    cmd = lp.prepare_waypoint(path, Pose(0, 0, 0, 0), 10.0, 3.75,
                              is_final=False, terrain_snapshot=snap)
    # candidate stops at 2.5 (the 5.0 point is behind the wall), then projects
    assert cmd.waypoint[0] == pytest.approx(3.75)
    assert not cmd.fallback


def test_corner_waypoint_never_behind():
    status = np.full((160, 160), TRAVERSABLE, dtype=np.uint8)
    snap = snapshot_from_status(status)
    # block x in [0.5, 2.2], y in [0.8, 6]; the path skirts its right corner
    for x in np.arange(0.5, 2.2, 0.25):
        for y in np.arange(0.8, 6.0, 0.25):
            i, j = snap.cell_of(x, y)
            status[i, j] = NON_TRAVERSABLE
    path = [(1.0, 0.0), (2.0, 0.2), (2.8, 0.6), (2.8, 3.0), (1.0, 5.5)]
    cmd = lp.prepare_waypoint(path, Pose(0, 0, 0, 0), 10.0, 3.75,
                              is_final=False, terrain_snapshot=snap)
    # post-corner points are occluded. The sight line is clearance-aware, so
    # the (2.8, 0.6) point whose ray grazes the corner within the passable
    # clearance is also rejected; the carrot settles on (2.0, 0.2)
    bearing = np.arctan2(cmd.waypoint[1], cmd.waypoint[0])
    assert abs(bearing) <= np.pi / 2
    assert bearing == pytest.approx(np.arctan2(0.2, 2.0), abs=1e-9)
    assert not cmd.fallback


def test_no_los_fallback():
    status = np.full((160, 160), TRAVERSABLE, dtype=np.uint8)
    snap = snapshot_from_status(status)
    for y in np.arange(-5, 5, 0.25):
        i, j = snap.cell_of(1.0, y)
        status[i, j] = NON_TRAVERSABLE
    cmd = lp.prepare_waypoint([(5.0, 0.0)], Pose(0, 0, 0, 0), 10.0, 3.75,
                              is_final=False, terrain_snapshot=snap)
    assert cmd.fallback
    assert cmd.waypoint[0] > 0


def test_empty_path_rejected():
    with pytest.raises(ValueError):
        lp.prepare_waypoint([], Pose(0, 0, 0, 0), 5.0, 3.75, False)


# -------------------------------------------------------------- compute_cmd


def test_none_group_stops(lib_table):
    lib, _ = lib_table
    wp = lp.WaypointCmd(waypoint=(1.0, 0.0), speed_limit=1.0)
    cmd = lp.compute_cmd(lib, None, np.zeros(lib.n, np.uint8), wp, Pose(0, 0, 0, 0))
    assert cmd.v == 0 and cmd.omega == 0


def test_straight_group_full_speed(lib_table):
    lib, _ = lib_table
    wp = lp.WaypointCmd(waypoint=(5.0, 0.0), speed_limit=1.0)
    cmd = lp.compute_cmd(lib, 0, np.zeros(lib.n, np.uint8), wp, Pose(0, 0, 0, 0))
    assert cmd.v == pytest.approx(1.0)
    assert abs(cmd.omega) < 1e-6


def test_final_approach_slows(lib_table):
    lib, _ = lib_table
    wp = lp.WaypointCmd(waypoint=(0.5, 0.0), speed_limit=1.0, is_final=True)
    cmd = lp.compute_cmd(lib, 0, np.zeros(lib.n, np.uint8), wp, Pose(0, 0, 0, 0))
    assert cmd.v <= 1.0 * 0.5 / 3.75 + 1e-9


def test_blocked_primitive_never_executed(lib_table):
    # when the central primitives are blocked, the chosen one is free
    lib, _ = lib_table
    blocked = np.zeros(lib.n, np.uint8)
    members = np.flatnonzero(lib.group_of == 0)
    central = members[np.argsort(lib.rank_in_group[members])][:5]
    blocked[central] = 1
    wp = lp.WaypointCmd(waypoint=(5.0, 0.0), speed_limit=1.0)
    cmd = lp.compute_cmd(lib, 0, blocked, wp, Pose(0, 0, 0, 0))
    assert cmd.v > 0  # still moves on an outer free primitive


def test_nav_boundary_blocks_exit(lib_table):
    lib, _ = lib_table
    # boundary behind the vehicle: all forward endpoints outside -> stop
    boundary = [(-5.0, -5.0), (-1.0, -5.0), (-1.0, 5.0), (-5.0, 5.0)]
    wp = lp.WaypointCmd(waypoint=(5.0, 0.0), speed_limit=1.0,
                        nav_boundary=np.array(boundary))
    cmd = lp.compute_cmd(lib, 0, np.zeros(lib.n, np.uint8), wp, Pose(0, 0, 0, 0))
    assert cmd.v == 0 and cmd.omega == 0


def test_speed_limit_validation():
    with pytest.raises(ValueError):
        lp.WaypointCmd(waypoint=(0, 0), speed_limit=0.0)
    with pytest.raises(ValueError):
        lp.WaypointCmd(waypoint=(0, 0), speed_limit=CmdVel.V_MAX + 1)


# ------------------------------------------------------------------ latency


def test_masking_latency(lib_table):
    lib, table = lib_table
    rng = np.random.default_rng(0)
    pts = rng.uniform(-7.5, 7.5, (2000, 2))
    # warm up any compiled paths
    lp.find_blocked(table, pts, lib.n)
    times = []
    for _ in range(30):
        t0 = time.perf_counter()
        mask = lp.find_blocked(table, pts, lib.n)
        lp.select_group(lib, mask, (5.0, 0.0))
        times.append(time.perf_counter() - t0)
    assert np.median(times) < 0.005
