"""numba-jitted kernel backend."""
from numba import njit

from . import _loops

_jit = njit(cache=True, fastmath=False)

raycast = _jit(_loops.raycast)
segments_block = _jit(_loops.segments_block)
grid_dijkstra = _jit(_loops.grid_dijkstra)
clear_dynamic_cells = _jit(_loops.clear_dynamic_cells)
bin_points = _jit(_loops.bin_points)
aggregate_cells = _jit(_loops.aggregate_cells)
classify_cells = _jit(_loops.classify_cells)
count_ray_crossings = _jit(_loops.count_ray_crossings)
update_seen = _jit(_loops.update_seen)
los_grid = _jit(_loops.los_grid)
los_grid_many = _jit(_loops.los_grid_many)
table_lookup = _jit(_loops.table_lookup)

NAME = "numba"
