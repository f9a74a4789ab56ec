"""
One-to-one matching tests: cost matrix, Kuhn-Munkres solver against brute force.

Run from repo root:
    python -m pytest tests/test_assignment.py -v
"""

from __future__ import annotations

import itertools
import time

import numpy as np
import pytest

from src.assignment import (
    CostMatrix,
    MatchConfig,
    build_cost_matrix,
    hungarian_match,
    one_to_one_assign,
    solve_assignment,
)
from src.core import InputError, Point, Prediction
from src.synth import Rng
from tests.oracles import brute_force_assignment, exhaustive_assignment, scalar_cost_matrix


def _int_matrix(rng: Rng, n: int, m: int, lo: int = -9, hi: int = 9) -> np.ndarray:
    return np.array([[lo + rng.randbelow(hi - lo + 1) for _ in range(m)] for _ in range(n)], dtype=float)


# ---------------------------------------------------------------------------
# Cost matrix
# ---------------------------------------------------------------------------

def test_cost_entry_arithmetic():
    costs = build_cost_matrix([Point(0, 0)], [Prediction(Point(6, 8), 0.8)], MatchConfig(tau=0.05))
    assert costs.values[0, 0] == pytest.approx(-0.3, abs=1e-15)


def test_cost_entry_minimum_on_exact_hit():
    costs = build_cost_matrix([Point(2, 3)], [Prediction(Point(2, 3), 1.0)])
    assert costs.values[0, 0] == -1.0


def test_cost_matrix_matches_scalar_oracle():
    rng = Rng(11)
    gt = [Point(rng.uniform(0, 64), rng.uniform(0, 64)) for _ in range(3)]
    props = [Prediction(Point(rng.uniform(0, 64), rng.uniform(0, 64)), rng.random()) for _ in range(5)]
    got = build_cost_matrix(gt, props, MatchConfig(tau=0.05)).values
    expected = scalar_cost_matrix(gt, props, 0.05)
    assert got.shape == (3, 5)
    assert np.allclose(got, expected, rtol=0, atol=1e-13)


def test_cost_matrix_insufficient_proposals():
    with pytest.raises(InputError, match="insufficient proposals"):
        build_cost_matrix([Point(0, 0), Point(1, 1)], [Prediction(Point(0, 0), 0.5)])
    with pytest.raises(InputError, match="insufficient proposals"):
        build_cost_matrix([], [])


def test_cost_matrix_validation():
    with pytest.raises(InputError):
        CostMatrix(np.array([1.0, 2.0]))
    with pytest.raises(InputError):
        CostMatrix(np.array([[1.0, np.nan]]))
    with pytest.raises(InputError):
        MatchConfig(tau=0)


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------

def test_hungarian_small_example():
    result = hungarian_match(CostMatrix(np.array([[1.0, 2.0], [2.0, 4.0]])))
    assert result.assignment == (1, 0)
    assert result.total_cost == 4.0


def test_hungarian_zero_diagonal_is_identity():
    values = np.ones((4, 4)) - np.eye(4)
    result = hungarian_match(CostMatrix(values))
    assert result.assignment == (0, 1, 2, 3)
    assert result.total_cost == 0.0


def test_hungarian_empty_rows():
    result = hungarian_match(CostMatrix(np.zeros((0, 3))))
    assert result.assignment == ()
    assert result.negatives == frozenset({0, 1, 2})
    assert result.total_cost == 0.0


def test_hungarian_rejects_more_rows_than_columns():
    with pytest.raises(InputError):
        solve_assignment(np.zeros((3, 2)))


def test_hungarian_matches_brute_force_on_random_integer_matrices():
    rng = Rng(2024)
    solver_secs = 0.0
    for trial in range(1000):
        n = 1 + rng.randbelow(7)
        m = n + rng.randbelow(9 - n + 1)
        values = _int_matrix(rng, n, m)
        started = time.perf_counter()
        result = hungarian_match(CostMatrix(values))
        solver_secs += time.perf_counter() - started
        expected_assign, expected_cost = exhaustive_assignment(values.tolist())
        assert result.total_cost == expected_cost, f"trial {trial}: {values.tolist()}"
        assert len(set(result.assignment)) == n
        assert result.assignment == expected_assign, f"tie-break differs on trial {trial}"
    assert solver_secs < 10, f"1000 solves took {solver_secs:.1f}s"


def test_exhaustive_oracle_agrees_with_enumeration():
    rng = Rng(7)
    for _ in range(50):
        n = 1 + rng.randbelow(4)
        m = n + rng.randbelow(6 - n + 1)
        values = _int_matrix(rng, n, m).tolist()
        assert exhaustive_assignment(values) == brute_force_assignment(values)


def test_hungarian_tie_break_is_lexicographic():
    # every injective map costs the same
    values = np.zeros((3, 5))
    assert hungarian_match(CostMatrix(values)).assignment == (0, 1, 2)
    values = np.array([[0.0, 0.0, 5.0], [0.0, 0.0, 5.0]])
    assert hungarian_match(CostMatrix(values)).assignment == (0, 1)


def test_hungarian_tie_break_on_every_binary_3x4_matrix():
    # dense ties: giving up a column may need a second chain to re-cover it
    mismatches = []
    for bits in itertools.product((0.0, 1.0), repeat=12):
        values = np.array(bits).reshape(3, 4)
        expected, expected_cost = brute_force_assignment(values.tolist())
        result = hungarian_match(CostMatrix(values))
        if result.assignment != expected or result.total_cost != expected_cost:
            mismatches.append((bits, result.assignment, expected))
    assert not mismatches, f"{len(mismatches)} mismatches, first: {mismatches[0]}"


def test_hungarian_tie_break_needs_two_chains():
    # zero-cost maps: (0, 2, 1), (0, 3, 1), (2, 3, 1)
    values = np.array([
        [0.0, 5.0, 0.0, 5.0],
        [5.0, 5.0, 0.0, 0.0],
        [5.0, 0.0, 5.0, 5.0],
    ])
    result = hungarian_match(CostMatrix(values))
    assert result.assignment == brute_force_assignment(values.tolist())[0] == (0, 2, 1)
    assert result.total_cost == 0.0


def test_hungarian_row_shift_invariance():
    rng = Rng(5)
    values = _int_matrix(rng, 5, 7)
    base = hungarian_match(CostMatrix(values))
    shifted = values.copy()
    shifted[2] += 13.0
    moved = hungarian_match(CostMatrix(shifted))
    assert moved.assignment == base.assignment
    assert moved.total_cost == base.total_cost + 13.0


def test_hungarian_large_instance_is_fast():
    rng = np.random.default_rng(0)
    values = rng.random((1000, 1000))
    started = time.perf_counter()
    result = hungarian_match(CostMatrix(values))
    elapsed = time.perf_counter() - started
    assert len(set(result.assignment)) == 1000
    assert elapsed < 5, f"1000x1000 solve took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# one_to_one_assign
# ---------------------------------------------------------------------------

def test_one_to_one_prefers_confident_proposal():
    gt = [Point(0, 0)]
    props = [Prediction(Point(-3, 0), 0.1), Prediction(Point(3, 0), 0.9)]
    result = one_to_one_assign(gt, props)
    assert result.assignment == (1,)
    assert result.negatives == frozenset({0})


def test_one_to_one_prefers_closer_proposal():
    gt = [Point(0, 0)]
    props = [Prediction(Point(5, 0), 0.5), Prediction(Point(0, 1), 0.5)]
    assert one_to_one_assign(gt, props).assignment == (1,)


def test_one_to_one_positive_count_is_n():
    gt = [Point(10, 10), Point(11, 10)]
    props = [Prediction(Point(10.5, 10), 0.5), Prediction(Point(12, 10), 0.5), Prediction(Point(9, 10), 0.5)]
    result = one_to_one_assign(gt, props)
    assert len(result.positives) == 2
    assert len(result.negatives) == 1
    assert result.positives | result.negatives == frozenset(range(3))
    assert result.pairs == tuple(enumerate(result.assignment))


def test_one_to_one_injective_on_random_scenes():
    rng = Rng(99)
    for _ in range(20):
        gt = [Point(rng.uniform(0, 32), rng.uniform(0, 32)) for _ in range(8)]
        props = [Prediction(Point(rng.uniform(0, 32), rng.uniform(0, 32)), rng.random()) for _ in range(15)]
        result = one_to_one_assign(gt, props)
        assert len(set(result.assignment)) == 8
        assert len(result.positives) == 8
