import json

import numpy as np
import pytest

from groundnav import geometry as geo
from groundnav import world as ws
from groundnav.world import (
    CmdVel,
    Pose,
    SensorParams,
    WorldError,
    cast_scan,
    generate_world,
    load_world,
    step_dynamic_agents,
    step_vehicle,
    world_to_json,
)


def make_world(obstacles=(), pits=(), patches=(), agents=(), start=(0, 0, 0), bounds=(-20, -20, 20, 20)):
    data = {
        "bounds": list(bounds),
        "obstacles": [np.asarray(o).tolist() for o in obstacles],
        "pits": [np.asarray(p).tolist() for p in pits],
        "height_patches": [{"polygon": np.asarray(p).tolist(), "z": z} for p, z in patches],
        "dynamic_agents": list(agents),
        "start_pose": {"x": start[0], "y": start[1], "heading": start[2]},
    }
    return load_world(json.dumps(data))


SQUARE = [[5, -1], [7, -1], [7, 1], [5, 1]]


class TestLoadWorld:
    def test_minimal_valid(self):
        w = make_world(obstacles=[SQUARE])
        assert len(w.obstacles) == 1
        assert len(w.pits) == 0

    def test_start_in_obstacle_rejected(self):
        with pytest.raises(WorldError, match="start pose not in free space"):
            make_world(obstacles=[SQUARE], start=(6, 0, 0))

    def test_self_intersecting_rejected(self):
        bow = [[0, 0], [2, 2], [2, 0], [0, 2]]
        with pytest.raises(WorldError, match="self-intersecting"):
            make_world(obstacles=[bow], start=(-5, 0, 0))

    def test_parse_error_has_locus(self):
        with pytest.raises(WorldError, match="line"):
            load_world("{not json")

    def test_geometry_outside_bounds(self):
        with pytest.raises(WorldError, match="outside bounds"):
            make_world(obstacles=[[[30, 0], [31, 0], [31, 1]]])

    def test_roundtrip(self):
        w = make_world(obstacles=[SQUARE])
        w2 = load_world(world_to_json(w))
        assert np.allclose(w2.obstacles[0], w.obstacles[0])


class TestGenerateWorld:
    def test_deterministic(self):
        a = generate_world("maze", 7, 50)
        b = generate_world("maze", 7, 50)
        assert world_to_json(a) == world_to_json(b)

    def test_maze_connected(self):
        w = generate_world("maze", 42, 50)
        free, _ = ws.free_space_raster(w)
        reach, _ = ws.reachable_free_mask(w)
        assert reach.sum() >= 0.98 * free.sum()
        assert 0.3 <= free.mean() <= 0.9

    def test_scatter_clearance(self):
        w = generate_world("scatter", 3, 60)
        discs = [p for p in w.obstacles if len(p) == 12]
        centers = np.array([p.mean(axis=0) for p in discs])
        radii = np.array([np.hypot(*(p[0] - c)) for p, c in zip(discs, centers)])
        for i in range(len(discs)):
            for j in range(i + 1, len(discs)):
                gap = np.hypot(*(centers[i] - centers[j])) - radii[i] - radii[j]
                assert gap >= 1.2 - 1e-6

    def test_corridor_width(self):
        # medial-axis clearance: every reachable free cell that is a corridor
        # interior cell must see >= 2.0 m of free span across it
        from scipy.ndimage import distance_transform_edt

        w = generate_world("corridors", 1, 80)
        free, _ = ws.free_space_raster(w, cell=0.25)
        dist = distance_transform_edt(free) * 0.25
        # local maxima of clearance along the medial axis of each corridor
        assert dist.max() >= 1.0  # at least one corridor half-width >= 1.0
        reach, _ = ws.reachable_free_mask(w, cell=0.25)
        # sample interior ridge cells: those farther from walls than neighbors
        ridge = (dist >= 1.0) & reach
        assert ridge.sum() > 0
        # corridor width = 2 * clearance at the ridge
        assert (2 * dist[ridge] >= 2.0 - 1e-9).all()

    @pytest.mark.parametrize("kind", ["maze", "rooms", "corridors", "scatter"])
    def test_all_kinds_valid(self, kind):
        w = generate_world(kind, 5, 40)
        free, _ = ws.free_space_raster(w)
        assert 0.3 <= free.mean() <= 0.9
        assert w.free_at(w.start_pose.x, w.start_pose.y)

    def test_size_range_enforced(self):
        with pytest.raises(WorldError):
            generate_world("maze", 1, 10)


class TestStepVehicle:
    def test_straight(self):
        p = step_vehicle(Pose(0, 0, 0, 0), CmdVel(1, 0), 0.1)
        assert np.allclose([p.x, p.y, p.heading], [0.1, 0, 0])

    def test_spin(self):
        p = step_vehicle(Pose(0, 0, 0, 0), CmdVel(0, 1), 0.1)
        assert np.allclose([p.x, p.y, p.heading], [0, 0, 0.1])

    def test_half_circle(self):
        # closed-form integration composes exactly, so pi split into legal steps
        p = Pose(0, 0, 0, 0)
        for _ in range(8):
            p = step_vehicle(p, CmdVel(1, 1), np.pi / 8)
        assert np.allclose([p.x, p.y], [0, 2], atol=1e-9)
        assert abs(abs(p.heading) - np.pi) < 1e-9

    def test_half_steps_compose(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            v = rng.uniform(-2, 2)
            om = rng.uniform(-1.5, 1.5)
            dt = rng.uniform(0.01, 0.5)
            th = rng.uniform(-np.pi, np.pi)
            full = step_vehicle(Pose(0, 0, 0, th), CmdVel(v, om), dt)
            half = step_vehicle(Pose(0, 0, 0, th), CmdVel(v, om), dt / 2)
            half = step_vehicle(half, CmdVel(v, om), dt / 2)
            assert np.allclose([full.x, full.y], [half.x, half.y], atol=1e-9)
            assert abs(geo.angdiff(full.heading, half.heading)) < 1e-9

    def test_dt_bounds(self):
        with pytest.raises(ValueError):
            step_vehicle(Pose(0, 0), CmdVel(1, 0), 0.6)


class TestCastScan:
    def test_empty_world_ground_only(self):
        w = make_world(bounds=(-50, -50, 50, 50))
        s = cast_scan(w, Pose(0, 0), SensorParams())
        assert len(s.dropped_ray_bearings) == 0
        assert (np.abs(s.points[:, 2]) < 1e-12).all()
        r = np.hypot(s.points[:, 0], s.points[:, 1])
        assert (r <= 15.0 + 1e-9).all()

    def test_wall_hit(self):
        wall = [[5, -10], [5.5, -10], [5.5, 10], [5, 10]]
        w = make_world(obstacles=[wall])
        s = cast_scan(w, Pose(0, 0), SensorParams())
        # the bearing-0 ray hits x=5 head on
        i0 = np.argmin(np.abs(s.bearings))
        assert abs(s.bearings[i0]) < 1e-9
        pts = s.points[s.point_bearing_idx == i0]
        hit = pts[np.argmax(np.hypot(pts[:, 0], pts[:, 1]))]
        assert np.allclose(hit[:2], [5, 0], atol=1e-9)
        assert hit[2] == pytest.approx(ws.WALL_RETURN_HEIGHT)

    def test_square_room_analytic(self):
        room = 5.0
        walls = [
            [[-room, -room], [room, -room], [room, -room - 0.5], [-room, -room - 0.5]],
            [[-room, room], [room, room], [room, room + 0.5], [-room, room + 0.5]],
            [[-room, -room], [-room, room], [-room - 0.5, room], [-room - 0.5, -room]],
            [[room, -room], [room, room], [room + 0.5, room], [room + 0.5, -room]],
        ]
        w = make_world(obstacles=walls)
        s = cast_scan(w, Pose(0, 0), SensorParams())
        for i in range(720):
            b = s.bearings[i]
            expect = room / max(abs(np.cos(b)), abs(np.sin(b)))
            pts = s.points[s.point_bearing_idx == i]
            got = np.hypot(pts[:, 0], pts[:, 1]).max()
            assert got == pytest.approx(expect, abs=1e-9)

    def test_scan_points_not_inside_obstacles(self):
        w = generate_world("maze", 3, 40)
        s = cast_scan(w, w.start_pose, SensorParams())
        for poly in w.obstacles:
            from matplotlib.path import Path

            inside = Path(poly).contains_points(s.points[:, :2], radius=-1e-9)
            assert not inside.any()

    def test_determinism(self):
        w = generate_world("rooms", 2, 40)
        a = cast_scan(w, w.start_pose, SensorParams(noise_sigma=0.01), np.random.default_rng(5))
        b = cast_scan(w, w.start_pose, SensorParams(noise_sigma=0.01), np.random.default_rng(5))
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.dropped_ray_bearings, b.dropped_ray_bearings)

    def test_partition_of_rays(self):
        pit = [[2, -2], [6, -2], [6, 2], [2, 2]]
        w = make_world(pits=[pit])
        s = cast_scan(w, Pose(0, 0), SensorParams())
        with_pts = set(np.unique(s.point_bearing_idx).tolist())
        dropped = {int(np.argmin(np.abs(s.bearings - d))) for d in s.dropped_ray_bearings}
        assert with_pts.isdisjoint(dropped)
        assert with_pts | dropped == set(range(720))
        assert len(dropped) > 0  # pit rays dropped

    def test_pit_rays_dropped_toward_pit(self):
        pit = [[2, -2], [6, -2], [6, 2], [2, 2]]
        w = make_world(pits=[pit])
        s = cast_scan(w, Pose(0, 0), SensorParams())
        assert np.any(np.abs(s.dropped_ray_bearings) < 0.1)


class TestDynamicAgents:
    AGENT = {
        "footprint": [[-0.4, -0.4], [0.4, -0.4], [0.4, 0.4], [-0.4, 0.4]],
        "path": [[0, 5], [10, 5]],
        "speed": 1.0,
    }

    def test_zero_speed_unchanged(self):
        a = dict(self.AGENT, speed=0.0)
        w = make_world(agents=[a])
        w2 = step_dynamic_agents(w, 1.0)
        assert np.allclose(w2.dynamic_agents[0].polygon(), w.dynamic_agents[0].polygon())

    def test_translation(self):
        w = make_world(agents=[self.AGENT])
        w2 = step_dynamic_agents(w, 2.0)
        d = w2.dynamic_agents[0].polygon() - w.dynamic_agents[0].polygon()
        assert np.allclose(d, [2, 0])

    def test_additivity(self):
        w = make_world(agents=[self.AGENT])
        wa = w
        for _ in range(10):
            wa = step_dynamic_agents(wa, 0.1)
        wb = step_dynamic_agents(w, 1.0)
        assert np.allclose(
            wa.dynamic_agents[0].polygon(), wb.dynamic_agents[0].polygon(), atol=1e-9
        )

    def test_loops_at_end(self):
        w = make_world(agents=[self.AGENT])
        w2 = step_dynamic_agents(w, 12.0)  # path length 10, loops
        d = w2.dynamic_agents[0].polygon() - w.dynamic_agents[0].polygon()
        assert np.allclose(d, [2, 0])

    def test_agent_visible_in_scan(self):
        a = dict(self.AGENT, path=[[5, 0], [5, 0.1]], speed=0.0)
        w = make_world(agents=[a])
        s = cast_scan(w, Pose(0, 0), SensorParams())
        i0 = np.argmin(np.abs(s.bearings))
        pts = s.points[s.point_bearing_idx == i0]
        hit = pts[np.argmax(np.hypot(pts[:, 0], pts[:, 1]))]
        assert hit[0] == pytest.approx(4.6, abs=1e-9)
