import itertools

import numpy as np
import pytest

from groundnav.tsp import (
    CLOSED,
    OPEN_FIXED_START,
    TspInstance,
    solve_exact,
    solve_heuristic,
    tour_cost,
)


def brute_force(instance):
    """Enumerate every order; return (best order, best cost) with the
    lexicographically smallest order among optima."""
    n = instance.n
    start = instance.start_index
    others = [i for i in range(n) if i != start]
    best_cost = np.inf
    best_order = None
    for perm in itertools.permutations(others):
        order = [start] + list(perm)
        c = tour_cost(instance, order)
        if c < best_cost - 1e-9 or (
            abs(c - best_cost) <= 1e-9 and (best_order is None or order < best_order)
        ):
            best_cost = c
            best_order = order
    return best_order, best_cost


def random_instance(rng, n, mode):
    pts = rng.uniform(0, 100, size=(n, 2))
    m = np.hypot(pts[:, 0, None] - pts[None, :, 0], pts[:, 1, None] - pts[None, :, 1])
    return TspInstance(m, mode=mode)


def test_validation():
    with pytest.raises(ValueError):
        TspInstance(np.ones((2, 3)))
    with pytest.raises(ValueError):
        TspInstance(np.array([[0.0, np.inf], [1.0, 0.0]]))
    with pytest.raises(ValueError):
        TspInstance(np.array([[1.0]]))  # nonzero diagonal
    with pytest.raises(ValueError):
        TspInstance(np.array([[0.0, -1.0], [1.0, 0.0]]))
    with pytest.raises(ValueError):
        TspInstance(np.zeros((2, 2)), mode="loop")
    with pytest.raises(ValueError):
        TspInstance(np.zeros((2, 2)), start_index=5)


def test_trivial_sizes():
    one = TspInstance(np.zeros((1, 1)))
    assert solve_exact(one) == ([0], 0.0)
    assert solve_heuristic(one) == ([0], 0.0)
    two = TspInstance(np.array([[0.0, 3.0], [3.0, 0.0]]))
    order, cost = solve_exact(two)
    assert order == [0, 1] and cost == pytest.approx(3.0)
    closed_two = TspInstance(np.array([[0.0, 3.0], [3.0, 0.0]]), mode=CLOSED)
    order, cost = solve_exact(closed_two)
    assert cost == pytest.approx(6.0)


def test_exact_limit():
    with pytest.raises(ValueError):
        solve_exact(TspInstance(np.zeros((15, 15))))


def test_collinear_points_open():
    # points on a line at x = 0, 1, 2, 3 starting from x = 1
    xs = np.array([1.0, 0.0, 2.0, 3.0])
    m = np.abs(xs[:, None] - xs[None, :])
    order, cost = solve_exact(TspInstance(m, mode=OPEN_FIXED_START))
    assert cost == pytest.approx(4.0)  # sweep to 0 then out to 3
    assert order[0] == 0


@pytest.mark.parametrize("mode", [OPEN_FIXED_START, CLOSED])
def test_exact_matches_brute_force(mode):
    rng = np.random.default_rng(7)
    for trial in range(60):
        n = int(rng.integers(2, 9))
        inst = random_instance(rng, n, mode)
        got_order, got_cost = solve_exact(inst)
        want_order, want_cost = brute_force(inst)
        assert got_cost == pytest.approx(want_cost, abs=1e-7), trial
        assert tour_cost(inst, got_order) == pytest.approx(got_cost, abs=1e-7)
        assert sorted(got_order) == list(range(n))


def test_exact_lexicographic_ties():
    # symmetric square: many optimal closed tours, expect smallest order
    m = np.array(
        [
            [0.0, 1.0, np.sqrt(2), 1.0],
            [1.0, 0.0, 1.0, np.sqrt(2)],
            [np.sqrt(2), 1.0, 0.0, 1.0],
            [1.0, np.sqrt(2), 1.0, 0.0],
        ]
    )
    inst = TspInstance(m, mode=CLOSED)
    order, cost = solve_exact(inst)
    want_order, want_cost = brute_force(inst)
    assert cost == pytest.approx(want_cost)
    assert order == want_order == [0, 1, 2, 3]


def test_exact_ties_match_oracle_randomized():
    # small integer costs force frequent ties
    rng = np.random.default_rng(11)
    for trial in range(40):
        n = int(rng.integers(3, 7))
        m = rng.integers(1, 4, size=(n, n)).astype(float)
        m = (m + m.T) / 2
        np.fill_diagonal(m, 0.0)
        for mode in (OPEN_FIXED_START, CLOSED):
            inst = TspInstance(m, mode=mode)
            got_order, got_cost = solve_exact(inst)
            want_order, want_cost = brute_force(inst)
            assert got_cost == pytest.approx(want_cost), trial
            assert got_order == want_order, (trial, mode)


@pytest.mark.parametrize("mode", [OPEN_FIXED_START, CLOSED])
def test_heuristic_valid_and_near_exact(mode):
    rng = np.random.default_rng(21)
    ratios = []
    for _ in range(100):
        n = int(rng.integers(5, 11))
        inst = random_instance(rng, n, mode)
        order, cost = solve_heuristic(inst)
        assert sorted(order) == list(range(n))
        assert order[0] == inst.start_index
        assert tour_cost(inst, order) == pytest.approx(cost)
        _, best = solve_exact(inst)
        assert cost >= best - 1e-7
        ratios.append(cost / best if best > 0 else 1.0)
    ratios = np.array(ratios)
    assert (ratios <= 1.05).mean() >= 0.95


def test_heuristic_deterministic():
    rng = np.random.default_rng(33)
    inst = random_instance(rng, 12, OPEN_FIXED_START)
    a = solve_heuristic(inst)
    b = solve_heuristic(inst)
    assert a == b


def test_heuristic_scales_past_exact_limit():
    rng = np.random.default_rng(5)
    inst = random_instance(rng, 40, OPEN_FIXED_START)
    order, cost = solve_heuristic(inst)
    assert sorted(order) == list(range(40))
    assert cost == pytest.approx(tour_cost(inst, order))
