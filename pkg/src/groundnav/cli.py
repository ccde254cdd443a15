"""Command-line entry points.

Subcommands: run a scenario, generate a world file, benchmark suites,
serve the operator console, and re-plot a metrics CSV.
"""
from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from .harness import (
    ConfigError,
    MetricsLog,
    ScenarioConfig,
    emit_plots,
    run_scenario,
    serve_console,
)
from .world import generate_world, world_to_json

CSV_COLUMNS = (
    "tick", "sim_time", "x", "y", "heading", "explored_area",
    "travel_distance", "mode", "planner_runtime_ms", "collisions", "events",
)


def _parse_params(pairs):
    out = {}
    for p in pairs or []:
        if "=" not in p:
            raise ConfigError(f"--params needs k=v, got {p!r}")
        k, v = p.split("=", 1)
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def load_scenario(spec: str, seed=None, overrides=None) -> ScenarioConfig:
    """Scenario from a JSON file, or a `kind:seed:size` generator shorthand."""
    if spec.endswith(".json"):
        with open(spec) as fh:
            data = json.load(fh)
    else:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ConfigError(
                "scenario must be a .json file or kind:seed:size shorthand"
            )
        kind, wseed, size = parts
        data = {"world": {"kind": kind, "seed": int(wseed), "size": float(size)}}
    data.update(overrides or {})
    if seed is not None:
        data["rng_seed"] = seed
    if "mode_script" in data:
        data["mode_script"] = [tuple(e) for e in data["mode_script"]]
    return ScenarioConfig(**data)


def cmd_run(args) -> int:
    cfg = load_scenario(args.scenario, args.seed, _parse_params(args.params))
    if args.metrics:
        cfg.metrics_path = args.metrics
    metrics = run_scenario(cfg)
    last = metrics.last
    if last:
        print(
            f"ticks={last['tick']} sim_time={last['sim_time']:.1f}s "
            f"explored={last['explored_area']:.1f}m^2 "
            f"travel={last['travel_distance']:.1f}m "
            f"collisions={last['collisions']} mode={last['mode']}"
        )
    if not args.headless:
        prefix = args.metrics.rsplit(".", 1)[0] if args.metrics else "metrics"
        for f in emit_plots(metrics, prefix):
            print("wrote", f)
    return 0


def cmd_generate_world(args) -> int:
    world = generate_world(args.kind, args.seed_pos, args.size)
    with open(args.output, "w") as fh:
        fh.write(world_to_json(world))
    print("wrote", args.output)
    return 0


def cmd_serve(args) -> int:
    cfg = load_scenario(args.scenario, args.seed, _parse_params(args.params))
    srv = serve_console(cfg, port=args.port)
    print(f"console server on 127.0.0.1:{srv.port}")
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        srv.stop()
    return 0


def cmd_plot(args) -> int:
    metrics = MetricsLog()
    with open(args.csv) as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != CSV_COLUMNS:
            raise ConfigError("unrecognized metrics header")
        for line in fh:
            parts = line.rstrip("\n").split(",", len(CSV_COLUMNS) - 1)
            row = dict(zip(CSV_COLUMNS, parts))
            for k in ("tick", "collisions"):
                row[k] = int(row[k])
            for k in ("sim_time", "x", "y", "heading", "explored_area",
                      "travel_distance", "planner_runtime_ms"):
                row[k] = float(row[k])
            metrics.append(row)
    for f in emit_plots(metrics, args.csv.rsplit(".", 1)[0]):
        print("wrote", f)
    return 0


# ------------------------------------------------------------------ bench


def _bench_kernels() -> int:
    from .kernels import numpy_impl
    try:
        from .kernels import numba_impl
    except ImportError:
        numba_impl = None

    rng = np.random.default_rng(0)
    grid = (rng.random((200, 200)) > 0.25).astype(np.uint8)
    status = rng.integers(0, 3, size=(200, 200)).astype(np.uint8)
    seen = np.zeros_like(status)
    cases = [
        ("grid_dijkstra", lambda m: m.grid_dijkstra(grid, 5, 5)),
        ("update_seen", lambda m: m.update_seen(
            status, seen.copy(), 25.0, 25.0, 360, 12.0, 0.0, 0.0, 0.25)),
        ("los_grid", lambda m: [
            m.los_grid(status, 1.0, 1.0, 45.0, 40.0, 0.0, 0.0, 0.25, 0)
            for _ in range(200)
        ]),
    ]
    rows = []
    for name, fn in cases:
        timings = {}
        for label, mod in (("numba", numba_impl), ("numpy", numpy_impl)):
            if mod is None:
                timings[label] = float("nan")
                continue
            fn(mod)  # warm-up / JIT
            t0 = time.perf_counter()
            reps = 5
            for _ in range(reps):
                fn(mod)
            timings[label] = (time.perf_counter() - t0) / reps * 1000
        rows.append((name, timings["numba"], timings["numpy"]))
    print(f"{'kernel':<16}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for name, tb, tp in rows:
        ratio = tp / tb if tb and np.isfinite(tb) else float("nan")
        print(f"{name:<16}{tb:>12.3f}{tp:>12.3f}{ratio:>9.1f}x")
    return 0


def _bench_acceptance(seed) -> int:
    scenarios = [
        ("scatter-0", {"kind": "scatter", "seed": 0, "size": 30.0}, 300.0),
        ("scatter-1", {"kind": "scatter", "seed": 1, "size": 30.0}, 300.0),
        ("maze-0", {"kind": "maze", "seed": 0, "size": 50.0}, 1200.0),
    ]
    print(f"{'scenario':<12}{'sim s':>8}{'wall s':>8}{'explored':>10}"
          f"{'travel':>8}{'coll':>6}{'done':>6}")
    for name, world, limit in scenarios:
        cfg = ScenarioConfig(
            world=world, duration_limit=limit,
            rng_seed=seed if seed is not None else 0,
        )
        t0 = time.perf_counter()
        metrics = run_scenario(cfg)
        wall = time.perf_counter() - t0
        last = metrics.last
        done = "done" in (last["events"] or "")
        print(f"{name:<12}{last['sim_time']:>8.0f}{wall:>8.1f}"
              f"{last['explored_area']:>10.1f}{last['travel_distance']:>8.1f}"
              f"{last['collisions']:>6}{str(done):>6}")
    return 0


def cmd_bench(args) -> int:
    if args.suite == "kernels":
        return _bench_kernels()
    if args.suite == "acceptance":
        return _bench_acceptance(args.seed)
    raise ConfigError(f"unknown suite {args.suite!r}; use kernels|acceptance")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="groundnav")
    ap.add_argument("--seed", type=int, default=None, help="rng seed override")
    ap.add_argument("--headless", action="store_true", help="skip plot output")
    ap.add_argument("--params", action="append", metavar="K=V",
                    help="scenario field override, repeatable")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario to completion")
    p.add_argument("scenario")
    p.add_argument("-m", "--metrics", default=None, help="metrics CSV path")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("generate-world", help="write a world file")
    p.add_argument("kind", choices=("maze", "rooms", "corridors", "scatter"))
    p.add_argument("seed_pos", type=int, metavar="seed")
    p.add_argument("size", type=float)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_generate_world)

    p = sub.add_parser("bench", help="run a benchmark suite")
    p.add_argument("suite", choices=("kernels", "acceptance"))
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("serve", help="run a scenario with the console server")
    p.add_argument("scenario")
    p.add_argument("--port", type=int, default=8765)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("plot", help="plots from an existing metrics CSV")
    p.add_argument("csv")
    p.set_defaults(fn=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
