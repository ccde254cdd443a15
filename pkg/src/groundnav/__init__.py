"""Ground-vehicle navigation stack with a deterministic 2.5D simulation
harness: terrain traversability, motion-primitive local planning,
hierarchical TSP exploration, and incremental visibility-graph routing.
"""

__version__ = "0.1.0"
