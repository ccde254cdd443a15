"""Kernel backend selection.

Set GROUNDNAV_BACKEND=numpy to force the interpreted/vectorized fallback;
default is the numba backend when numba imports cleanly.
"""
import os

_choice = os.environ.get("GROUNDNAV_BACKEND", "auto").lower()

if _choice not in ("auto", "numba", "numpy"):
    raise ValueError(f"GROUNDNAV_BACKEND must be auto|numba|numpy, got {_choice!r}")

if _choice in ("auto", "numba"):
    try:
        from . import numba_impl as impl
    except ImportError:
        if _choice == "numba":
            raise
        from . import numpy_impl as impl
else:
    from . import numpy_impl as impl

BACKEND = impl.NAME

raycast = impl.raycast
segments_block = impl.segments_block
grid_dijkstra = impl.grid_dijkstra
clear_dynamic_cells = impl.clear_dynamic_cells
bin_points = impl.bin_points
aggregate_cells = impl.aggregate_cells
classify_cells = impl.classify_cells
count_ray_crossings = impl.count_ray_crossings
update_seen = impl.update_seen
los_grid = impl.los_grid
los_grid_many = impl.los_grid_many
table_lookup = impl.table_lookup
