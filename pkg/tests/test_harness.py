import json
import socket
import time

import numpy as np
import pytest

from conftest import build_world
from groundnav import explorer as ex
from groundnav.harness import (
    ConfigError,
    ConsoleServer,
    MetricsLog,
    ScenarioConfig,
    Simulation,
    apply_command,
    baseline_nearest_frontier,
    emit_plots,
    rle_decode,
    rle_encode,
    run_scenario,
    snapshot_frame,
)
from groundnav.world import Pose


def open_world(start=(2.0, 2.0, 0.0), size=14.0):
    """Four boundary slabs and one interior block; plenty of free space."""
    s = size
    wall = 0.5
    slabs = [
        [[-wall, -wall], [s + wall, -wall], [s + wall, 0], [-wall, 0]],
        [[-wall, s], [s + wall, s], [s + wall, s + wall], [-wall, s + wall]],
        [[-wall, 0], [0, 0], [0, s], [-wall, s]],
        [[s, 0], [s + wall, 0], [s + wall, s], [s, s]],
        [[6, 6], [8, 6], [8, 8], [6, 8]],
    ]
    return build_world(
        obstacles=slabs, start=start,
        bounds=(-wall - 0.5, -wall - 0.5, s + wall + 0.5, s + wall + 0.5),
    )


def sealed_room_world():
    """Open area with a fully enclosed room around (10, 10)."""
    s = 14.0
    wall = 0.5
    slabs = [
        [[-wall, -wall], [s + wall, -wall], [s + wall, 0], [-wall, 0]],
        [[-wall, s], [s + wall, s], [s + wall, s + wall], [-wall, s + wall]],
        [[-wall, 0], [0, 0], [0, s], [-wall, s]],
        [[s, 0], [s + wall, 0], [s + wall, s], [s, s]],
        # closed square ring: four walls with no gap
        [[8, 8], [12, 8], [12, 8.5], [8, 8.5]],
        [[8, 11.5], [12, 11.5], [12, 12], [8, 12]],
        [[8, 8.5], [8.5, 8.5], [8.5, 11.5], [8, 11.5]],
        [[11.5, 8.5], [12, 8.5], [12, 11.5], [11.5, 11.5]],
    ]
    return build_world(
        obstacles=slabs, start=(2.0, 2.0, 0.0),
        bounds=(-wall - 0.5, -wall - 0.5, s + wall + 0.5, s + wall + 0.5),
    )


def strip_runtime(csv_text: str) -> str:
    lines = csv_text.splitlines()
    out = [lines[0]]
    for ln in lines[1:]:
        parts = ln.split(",")
        parts[8] = "-"
        out.append(",".join(parts))
    return "\n".join(out)


# ------------------------------------------------------------------- config


def test_config_rejects_bad_tick_rate():
    with pytest.raises(ConfigError):
        ScenarioConfig(world=open_world(), tick_rate=0.0)


def test_config_rejects_goto_without_goal():
    with pytest.raises(ConfigError):
        ScenarioConfig(world=open_world(), mode_script=[(0.0, "goto", None)])


def test_config_rejects_unknown_mode():
    with pytest.raises(ConfigError):
        ScenarioConfig(world=open_world(), mode_script=[(0.0, "wander")])


def test_config_rejects_decreasing_times():
    with pytest.raises(ConfigError):
        ScenarioConfig(
            world=open_world(),
            mode_script=[(5.0, "stop"), (1.0, "explore")],
        )


# ----------------------------------------------------------------- running


def test_stop_script_never_moves():
    cfg = ScenarioConfig(
        world=open_world(), mode_script=[(0.0, "stop", None)],
        duration_limit=30.0,
    )
    metrics = run_scenario(cfg)
    assert metrics.last["travel_distance"] == 0.0
    assert metrics.last["collisions"] == 0


def test_metrics_monotone_and_ordered():
    cfg = ScenarioConfig(world=open_world(), duration_limit=20.0)
    metrics = run_scenario(cfg)
    ticks = [r["tick"] for r in metrics.rows]
    assert ticks == sorted(ticks) and len(set(ticks)) == len(ticks)
    trav = [r["travel_distance"] for r in metrics.rows]
    area = [r["explored_area"] for r in metrics.rows]
    assert all(b >= a for a, b in zip(trav, trav[1:]))
    assert all(b >= a for a, b in zip(area, area[1:]))


def test_deterministic_replay():
    outs = []
    for _ in range(3):
        cfg = ScenarioConfig(
            world={"kind": "scatter", "seed": 5, "size": 20.0},
            duration_limit=12.0, rng_seed=3,
        )
        outs.append(strip_runtime(run_scenario(cfg).to_csv()))
    assert outs[0] == outs[1] == outs[2]


def test_manual_twist_passthrough():
    cfg = ScenarioConfig(
        world=open_world(), mode_script=[(0.0, "manual", None)],
        duration_limit=5.0,
    )
    sim = Simulation(cfg)
    sim.state.manual_twist = (0.5, 0.0)
    for _ in range(20):
        sim.tick()
    assert sim.travel == pytest.approx(0.5 * 20 * sim.dt, rel=1e-6)
    assert sim.pose.heading == 0.0


def test_manual_twist_clamped():
    cfg = ScenarioConfig(
        world=open_world(), mode_script=[(0.0, "manual", None)],
        duration_limit=5.0,
    )
    sim = Simulation(cfg)
    sim.state.manual_twist = (99.0, 0.0)
    sim.tick()
    assert sim.travel <= 2.0 * sim.dt + 1e-9


def test_goto_reaches_goal_and_stops():
    cfg = ScenarioConfig(
        world=open_world(), mode_script=[(0.0, "goto", (5.0, 2.0))],
        duration_limit=60.0,
    )
    metrics = run_scenario(cfg)
    events = "|".join(r["events"] for r in metrics.rows)
    assert "goal_reached" in events
    assert metrics.last["mode"] == "stop"
    last = metrics.last
    assert np.hypot(last["x"] - 5.0, last["y"] - 2.0) < 0.5 + 1e-6


def test_goto_unreachable_goal_stops():
    cfg = ScenarioConfig(
        world=sealed_room_world(),
        mode_script=[(0.0, "goto", (10.0, 10.0))],
        duration_limit=60.0,
    )
    metrics = run_scenario(cfg)
    events = "|".join(r["events"] for r in metrics.rows)
    assert "unreachable" in events
    assert metrics.last["mode"] == "stop"


def test_mode_transition_explore_goto_explore():
    cfg = ScenarioConfig(
        world=open_world(),
        mode_script=[
            (0.0, "explore", None),
            (4.0, "goto", (4.0, 2.0)),
            (None, "explore", None),
        ],
        duration_limit=90.0,
    )
    metrics = run_scenario(cfg)
    modes = []
    for r in metrics.rows:
        for ev in r["events"].split("|"):
            if ev.startswith("mode:"):
                modes.append(ev[5:])
    assert "explore" in modes and "goto" in modes
    # after the goto leg completes the script returns to exploring
    gi = modes.index("goto")
    assert "explore" in modes[gi + 1:]
    events = "|".join(r["events"] for r in metrics.rows)
    assert "goal_reached" in events


def test_planners_never_touch_ground_truth():
    cfg = ScenarioConfig(world=open_world(), duration_limit=10.0)
    sim = Simulation(cfg)
    while not sim.finished:
        sim.tick()
    assert sim.ground_truth_accesses == 0


# ---------------------------------------------------------------- baseline


def _empty_cov(n=20):
    cov = ex.CoverageModel(ex.ExplorerParams(bounds=(0, 0, n * 0.25, n * 0.25)))
    return cov


def test_baseline_single_frontier():
    cov = _empty_cov()
    cov.status[:, :] = 1
    cov.status[10, 10] = 0  # lone unknown cell: the only frontier
    cov.seen[:, :] = 1
    cov.seen[10, 10] = 0
    path = baseline_nearest_frontier(cov, Pose(0.3, 0.3, 0.0, 0.0))
    assert path is not None
    assert np.hypot(path[-1][0] - cov.cell_center(10, 10)[0],
                    path[-1][1] - cov.cell_center(10, 10)[1]) < 0.4


def test_baseline_no_frontier_done():
    cov = _empty_cov()
    cov.status[:, :] = 1
    cov.seen[:, :] = 1
    assert baseline_nearest_frontier(cov, Pose(0.3, 0.3, 0.0, 0.0)) is None


def test_baseline_equidistant_tie_breaks_low_index():
    cov = _empty_cov(n=21)
    cov.status[:, :] = 1
    # two unknown cells symmetric around the vehicle column
    cov.status[10, 6] = 0
    cov.status[10, 14] = 0
    pose_xy = cov.cell_center(10, 10)
    path = baseline_nearest_frontier(cov, Pose(pose_xy[0], pose_xy[1], 0.0, 0.0))
    end = path[-1]
    lo = cov.cell_center(10, 6)
    assert np.hypot(end[0] - lo[0], end[1] - lo[1]) < 0.6


# ------------------------------------------------------------------- plots


def test_emit_plots_two_rows(tmp_path):
    metrics = MetricsLog()
    for k in range(2):
        metrics.append({
            "tick": k + 1, "sim_time": 0.1 * (k + 1), "x": 0.0, "y": 0.0,
            "heading": 0.0, "explored_area": float(k), "travel_distance": 0.0,
            "mode": "stop", "planner_runtime_ms": 0.1, "collisions": 0,
            "events": "",
        })
    files = emit_plots(metrics, str(tmp_path / "m"))
    assert len(files) == 3
    for f in files:
        text = open(f).read()
        assert "<svg" in text


def test_emit_plots_empty_log(tmp_path):
    files = emit_plots(MetricsLog(), str(tmp_path / "m"))
    for f in files:
        assert "<svg" in open(f).read()


# ----------------------------------------------------------- wire protocol


def test_rle_round_trip():
    rng = np.random.default_rng(1)
    for _ in range(20):
        grid = rng.integers(0, 3, size=rng.integers(1, 40, size=2)).astype(np.uint8)
        rle = rle_encode(grid)
        back = rle_decode(rle, grid.size).reshape(grid.shape)
        assert np.array_equal(grid, back)


def test_rle_rejects_length_mismatch():
    with pytest.raises(ValueError):
        rle_decode([1, 3], 5)


def test_snapshot_frame_round_trip():
    cfg = ScenarioConfig(world=open_world(), duration_limit=10.0)
    sim = Simulation(cfg)
    for _ in range(10):
        sim.tick()
    frame = snapshot_frame(sim)
    encoded = json.dumps(frame).encode()
    assert len(encoded) <= 256 * 1024
    decoded = json.loads(encoded)
    assert decoded["t"] == "snap"
    assert decoded["tick"] == sim.tick_no
    grid = rle_decode(decoded["grid"]["rle"],
                      decoded["grid"]["w"] * decoded["grid"]["h"])
    assert np.array_equal(
        grid.reshape(decoded["grid"]["h"], decoded["grid"]["w"]), sim.cov.status
    )
    assert all(np.isfinite(v) for v in decoded["pose"])


def test_apply_command_set_mode_and_twist():
    cfg = ScenarioConfig(
        world=open_world(), mode_script=[(0.0, "stop", None)],
        duration_limit=60.0,
    )
    sim = Simulation(cfg)
    sim.tick()
    apply_command(sim, {"t": "cmd", "kind": "set_mode", "mode": "manual"})
    apply_command(sim, {"t": "cmd", "kind": "twist", "v": 0.5, "omega": 0.0})
    before = sim.travel
    sim.tick()
    assert sim.travel == pytest.approx(before + 0.5 * sim.dt, rel=1e-6)


def test_apply_command_rejects_unknown():
    cfg = ScenarioConfig(world=open_world(), duration_limit=5.0)
    sim = Simulation(cfg)
    with pytest.raises(ValueError):
        apply_command(sim, {"t": "cmd", "kind": "fly"})


def test_apply_command_pause_and_step():
    cfg = ScenarioConfig(world=open_world(), duration_limit=60.0)
    sim = Simulation(cfg)
    apply_command(sim, {"t": "cmd", "kind": "pause"})
    assert sim.state.paused
    t0 = sim.tick_no
    for _ in range(3):
        apply_command(sim, {"t": "cmd", "kind": "step"})
    assert sim.tick_no == t0 + 3


def _read_frames(fh, want, timeout_s=10.0):
    frames = []
    deadline = time.time() + timeout_s
    while len(frames) < want and time.time() < deadline:
        line = fh.readline()
        if not line:
            break
        frames.append(json.loads(line))
    return frames


def test_console_server_loopback():
    cfg = ScenarioConfig(
        world=open_world(), mode_script=[(0.0, "manual", None)],
        duration_limit=1e9,
    )
    sim = Simulation(cfg)
    server = ConsoleServer(sim, port=0).start(realtime=False)
    try:
        conn = socket.create_connection(("127.0.0.1", server.port), timeout=5)
        fh = conn.makefile("rwb")
        frames = _read_frames(fh, 3)
        assert len(frames) == 3
        assert all(f["t"] == "snap" for f in frames)
        ticks = [f["tick"] for f in frames]
        assert ticks == sorted(ticks)
        # pause, then exactly three manual steps
        fh.write(b'{"t":"cmd","kind":"pause"}\n')
        fh.flush()
        deadline = time.time() + 5
        while not sim.state.paused and time.time() < deadline:
            time.sleep(0.01)
        assert sim.state.paused
        base = sim.tick_no
        for _ in range(3):
            fh.write(b'{"t":"cmd","kind":"step"}\n')
        fh.flush()
        deadline = time.time() + 5
        while sim.tick_no < base + 3 and time.time() < deadline:
            time.sleep(0.01)
        assert sim.tick_no == base + 3
        # malformed command produces an error frame but keeps the session
        fh.write(b'{"t":"cmd","kind":"no_such"}\n')
        fh.flush()
        got_err = False
        deadline = time.time() + 5
        while time.time() < deadline:
            line = fh.readline()
            if not line:
                break
            msg = json.loads(line)
            if msg.get("t") == "err":
                got_err = True
                break
        assert got_err
        conn.close()
    finally:
        server.stop()
