import json

import numpy as np
import pytest

from groundnav.world import Pose, SensorParams, cast_scan, load_world


def build_world(
    obstacles=(),
    pits=(),
    patches=(),
    agents=(),
    start=(0, 0, 0),
    bounds=(-20, -20, 20, 20),
):
    data = {
        "bounds": list(bounds),
        "obstacles": [np.asarray(o).tolist() for o in obstacles],
        "pits": [np.asarray(p).tolist() for p in pits],
        "height_patches": [
            {"polygon": np.asarray(p).tolist(), "z": float(z)} for p, z in patches
        ],
        "dynamic_agents": list(agents),
        "start_pose": {"x": start[0], "y": start[1], "heading": start[2]},
    }
    return load_world(json.dumps(data))


@pytest.fixture
def world_factory():
    return build_world


def scan_at(world, x, y, heading=0.0, params=None):
    return cast_scan(world, Pose(x, y, 0.0, heading), params or SensorParams())
