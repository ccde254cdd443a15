"""Traveling-salesman solvers shared by the exploration planner.

Exact Held-Karp dynamic programming for small instances (the oracle), and
nearest-neighbor + 2-opt for everything else. Open tours keep the start
fixed with no return leg; closed tours include it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OPEN_FIXED_START = "open_fixed_start"
CLOSED = "closed"

EXACT_LIMIT = 14
_TIE_EPS = 1e-9


@dataclass(frozen=True)
class TspInstance:
    cost_matrix: np.ndarray
    mode: str = OPEN_FIXED_START
    start_index: int = 0

    def __post_init__(self):
        m = np.asarray(self.cost_matrix, dtype=float)
        object.__setattr__(self, "cost_matrix", m)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("cost matrix must be square")
        if m.shape[0] < 1:
            raise ValueError("need at least one node")
        if not np.isfinite(m).all():
            raise ValueError("costs must be finite")
        if (np.diag(m) != 0).any():
            raise ValueError("diagonal must be zero")
        if (m < 0).any():
            raise ValueError("costs must be nonnegative")
        if self.mode not in (OPEN_FIXED_START, CLOSED):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not (0 <= self.start_index < m.shape[0]):
            raise ValueError("start_index out of range")

    @property
    def n(self) -> int:
        return self.cost_matrix.shape[0]


def tour_cost(instance: TspInstance, order) -> float:
    m = instance.cost_matrix
    c = sum(m[order[i], order[i + 1]] for i in range(len(order) - 1))
    if instance.mode == CLOSED and len(order) > 1:
        c += m[order[-1], order[0]]
    return float(c)


def solve_exact(instance: TspInstance):
    """Held-Karp optimum; ties broken to the lexicographically smallest order.

    Uses a backward DP: g[mask, j] is the cheapest cost to stand at node
    others[j], still visit exactly the set `mask`, and finish. The optimal
    order then falls out of a greedy forward pass that always takes the
    smallest next node consistent with the optimum.
    """
    n = instance.n
    if n > EXACT_LIMIT:
        raise ValueError(f"exact solver limited to n <= {EXACT_LIMIT}, got {n}")
    start = instance.start_index
    if n == 1:
        return [start], 0.0
    m = instance.cost_matrix
    others = np.array([i for i in range(n) if i != start])
    k = len(others)
    full = 1 << k
    m_oo = m[np.ix_(others, others)]
    g = np.full((full, k), np.inf)
    if instance.mode == CLOSED:
        g[0] = m[others, start]
    else:
        g[0] = 0.0
    members_of = [np.flatnonzero([(mask >> t) & 1 for t in range(k)]) for mask in range(full)]
    for mask in range(1, full):
        mem = members_of[mask]
        prev = g[mask ^ (1 << mem), mem]  # g at mask minus each member, ending there
        g[mask] = (m_oo[:, mem] + prev).min(axis=1)
    last = full - 1
    first_costs = m[start, others] + g[last ^ (1 << np.arange(k)), np.arange(k)]
    best = float(first_costs.min())
    order = [start]
    mask = last
    prev_node = start
    remaining = best
    while mask:
        for j in members_of[mask]:
            cand = m[prev_node, others[j]] + g[mask ^ (1 << j), j]
            if cand <= remaining + _TIE_EPS:
                remaining -= m[prev_node, others[j]]
                prev_node = others[j]
                order.append(int(others[j]))
                mask ^= 1 << j
                break
        else:  # numeric safety net; unreachable for consistent dp values
            j = int(members_of[mask][0])
            prev_node = others[j]
            order.append(int(others[j]))
            mask ^= 1 << j
    return order, best


def solve_heuristic(instance: TspInstance, rng: np.random.Generator | None = None):
    """Nearest-neighbor construction then 2-opt descent; deterministic."""
    n = instance.n
    m = instance.cost_matrix
    if n == 1:
        return [instance.start_index], 0.0
    if instance.mode == OPEN_FIXED_START:
        starts = [instance.start_index]
    else:
        starts = list(range(n))
    best_order = None
    best_cost = np.inf
    for s in starts:
        order = _nearest_neighbor(m, s)
        cost = tour_cost(instance, order)
        if cost < best_cost - _TIE_EPS:
            best_order, best_cost = order, cost
    order, cost = best_order, best_cost
    # alternate 2-opt with segment relocation until neither improves
    for _ in range(30):
        order, cost = _two_opt(instance, order)
        order, c2 = _or_opt(instance, order)
        if c2 >= cost - _TIE_EPS:
            break
        cost = c2
    if instance.mode == CLOSED and instance.start_index in order:
        # rotate so the anchor comes first
        i = order.index(instance.start_index)
        order = order[i:] + order[:i]
    return order, cost


def _nearest_neighbor(m: np.ndarray, start: int):
    n = m.shape[0]
    unvisited = set(range(n))
    unvisited.remove(start)
    order = [start]
    cur = start
    while unvisited:
        nxt = min(unvisited, key=lambda j: (m[cur, j], j))
        order.append(nxt)
        unvisited.remove(nxt)
        cur = nxt
    return order


def _or_opt(instance: TspInstance, order):
    """Relocate runs of 1-3 nodes to their best position; first improvement."""
    order = list(order)
    n = len(order)
    lo = 1 if instance.mode == OPEN_FIXED_START else 0
    cost = tour_cost(instance, order)
    improved = True
    guard = 0
    while improved and guard < 10000:
        improved = False
        guard += 1
        for seg in (1, 2, 3):
            for i in range(lo, n - seg + 1):
                chunk = order[i : i + seg]
                rest = order[:i] + order[i + seg :]
                for j in range(lo, len(rest) + 1):
                    if j == i:
                        continue
                    cand = rest[:j] + chunk + rest[j:]
                    c = tour_cost(instance, cand)
                    if c < cost - _TIE_EPS:
                        order, cost = cand, c
                        improved = True
                        break
                if improved:
                    break
            if improved:
                break
    return order, cost


def _two_opt(instance: TspInstance, order):
    """First-improvement 2-opt until no strictly improving swap remains."""
    order = list(order)
    m = instance.cost_matrix
    n = len(order)
    lo = 1 if instance.mode == OPEN_FIXED_START else 0
    cost = tour_cost(instance, order)
    improved = True
    guard = 0
    while improved and guard < 10000:
        improved = False
        guard += 1
        for i in range(lo, n - 1):
            for j in range(i + 1, n):
                cand = order[:i] + order[i : j + 1][::-1] + order[j + 1 :]
                c = tour_cost(instance, cand)
                if c < cost - _TIE_EPS:
                    order, cost = cand, c
                    improved = True
                    break
            if improved:
                break
    return order, cost
