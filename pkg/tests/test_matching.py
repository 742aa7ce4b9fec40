from itertools import permutations

import numpy as np
import pytest

from mcmt_tracker.matching import linear_assignment

def brute_force_minimum(cost):
    rows, cols = cost.shape
    if rows <= cols:
        return min(
            sum(cost[row, col] for row, col in zip(range(rows), chosen))
            for chosen in permutations(range(cols), rows)
        )

    return brute_force_minimum(cost.T)

def test_assignment_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(200):
        rows, cols = rng.integers(1, 7, size=2)
        cost = rng.uniform(0, 10, size=(rows, cols))

        matches, unmatched_rows, unmatched_cols = linear_assignment(cost)

        assert len(matches) == min(rows, cols)
        assert len(matches) + len(unmatched_rows) == rows
        assert len(matches) + len(unmatched_cols) == cols
        total = sum(cost[row, col] for row, col in matches)
        assert total == pytest.approx(brute_force_minimum(cost), abs=1e-9)

def test_forbidden_pairs_never_match():
    cost = np.array([[1.0, np.inf], [np.inf, 1.0]])
    matches, _, _ = linear_assignment(cost)
    assert matches == [(0, 0), (1, 1)]

    cost = np.array([[np.inf, np.inf], [1.0, 2.0]])
    matches, unmatched_rows, unmatched_cols = linear_assignment(cost)
    assert matches == [(1, 0)]
    assert unmatched_rows == [0]
    assert unmatched_cols == [1]

def test_forbidden_pairs_do_not_reduce_matches():
    # A cheap pair would block both finite pairs of the other row.
    cost = np.array([[0.1, 5.0], [1.0, np.inf]])
    matches, _, _ = linear_assignment(cost)
    assert matches == [(0, 1), (1, 0)]

def test_threshold_drops_expensive_pairs():
    cost = np.array([[0.2, 0.9], [0.9, 0.8]])
    matches, unmatched_rows, unmatched_cols = linear_assignment(cost, threshold=0.5)

    assert matches == [(0, 0)]
    assert unmatched_rows == [1]
    assert unmatched_cols == [1]

def test_empty_and_all_forbidden():
    assert linear_assignment(np.zeros((0, 3))) == ([], [], [0, 1, 2])
    assert linear_assignment(np.full((2, 2), np.inf)) == ([], [0, 1], [0, 1])
