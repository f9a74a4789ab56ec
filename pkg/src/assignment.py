"""
One-to-one proposal matching: cost matrix and rectangular Kuhn-Munkres solver.

Cost of pairing ground-truth point i with proposal j:

    D[i, j] = tau * ||p_i - p_hat_j||_2 - c_hat_j

The solver handles N <= M directly with shortest augmenting paths over dual
potentials (u for rows, v for columns). Unmatched columns keep v = 0, which is
the same optimum as padding the matrix with zero-cost dummy rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from src.core import InputError, Point, Prediction, pairwise_distances, points_array, predictions_arrays

DEFAULT_TAU = 5e-2

# Reduced costs within TIE_RTOL * scale of zero count as tight edges.
TIE_RTOL = 1e-9


@dataclass(frozen=True)
class MatchConfig:
    tau: float = DEFAULT_TAU

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise InputError(f"tau must be > 0, got {self.tau}")


@dataclass(frozen=True)
class CostMatrix:
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise InputError(f"cost matrix must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InputError("cost matrix has non-finite entries")
        object.__setattr__(self, "values", values)

    @property
    def rows(self) -> int:
        return int(self.values.shape[0])

    @property
    def cols(self) -> int:
        return int(self.values.shape[1])


@dataclass(frozen=True)
class MatchResult:
    assignment: tuple[int, ...]
    positives: frozenset[int]
    negatives: frozenset[int]
    total_cost: float

    @property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        """(gt_index, proposal_index) for every ground-truth point."""
        return tuple(enumerate(self.assignment))


# ---------------------------------------------------------------------------
# Cost matrix
# ---------------------------------------------------------------------------

def cost_matrix_arrays(
    gt_xy: np.ndarray, prop_xy: np.ndarray, conf: np.ndarray, tau: float
) -> np.ndarray:
    n, m = gt_xy.shape[0], prop_xy.shape[0]
    if m == 0:
        raise InputError("insufficient proposals: proposal set is empty")
    if n > m:
        raise InputError(f"insufficient proposals: N={n} ground-truth points > M={m} proposals")
    return tau * pairwise_distances(gt_xy, prop_xy) - conf[None, :]


def build_cost_matrix(
    gt: Sequence[Point], proposals: Sequence[Prediction], cfg: MatchConfig = MatchConfig()
) -> CostMatrix:
    prop_xy, conf = predictions_arrays(proposals)
    return CostMatrix(cost_matrix_arrays(points_array(gt), prop_xy, conf, cfg.tau))


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------

def _shortest_augmenting_path(c: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Min-cost row-saturating assignment for an n x m matrix, n <= m.

    Returns (assignment, u, v) with u[i] + v[j] <= c[i, j], equality on matched
    pairs, v <= 0 and v == 0 on unmatched columns.
    """
    n, m = c.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    # Column 0 is the virtual root of each search; p[j] is the 1-based row on column j.
    p = np.zeros(m + 1, dtype=np.int64)
    way = np.zeros(m + 1, dtype=np.int64)

    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            cur = np.empty(m + 1)
            cur[0] = np.inf
            cur[1:] = c[i0 - 1] - u[i0] - v[1:]
            better = ~used & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0

            candidates = np.where(used, np.inf, minv)
            j1 = int(np.argmin(candidates))
            delta = candidates[j1]

            used_cols = np.flatnonzero(used)
            u[p[used_cols]] += delta
            v[used_cols] -= delta
            minv[~used] -= delta

            j0 = j1
            if p[j0] == 0:
                break

        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    assignment = np.empty(n, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j]:
            assignment[p[j] - 1] = j - 1
    return assignment, u[1:].copy(), v[1:].copy()


def _alternating_path(
    tight: list[np.ndarray],
    owner: np.ndarray,
    col_free: np.ndarray,
    start: int,
    home: int,
    home_may_free: bool,
) -> list[int] | None:
    """Columns [start, ..., end] along tight edges that let a row move from `home` to `start`.

    owner[j] is the unfixed row holding column j, or -1. The path ends either
    back at `home` or at an unheld column, the latter only when `home` may go
    unmatched.
    """
    parent = {start: -1}
    queue = [start]
    for col in queue:
        if col == home or (owner[col] < 0 and home_may_free):
            path = [col]
            while parent[path[-1]] >= 0:
                path.append(parent[path[-1]])
            return path[::-1]
        r = owner[col]
        if r < 0:
            continue
        for nxt in tight[r]:
            nxt = int(nxt)
            if col_free[nxt] and nxt not in parent:
                parent[nxt] = col
                queue.append(nxt)
    return None


def _completion(
    c: np.ndarray, col_free: np.ndarray, i: int, j: int, target: float, tol: float
) -> np.ndarray | None:
    """Optimal columns for rows i+1.. once row i takes column j.

    None when pinning (i, j) costs more than `target`, the optimum of rows i.. .
    """
    cols = np.flatnonzero(col_free)
    cols = cols[cols != j]
    rest = c[i + 1:][:, cols]
    sub, _, _ = _shortest_augmenting_path(rest)
    cost = float(c[i, j]) + float(rest[np.arange(rest.shape[0]), sub].sum())
    if cost > target + tol:
        return None
    return cols[sub]


def _lexicographic_refine(
    c: np.ndarray, assignment: np.ndarray, u: np.ndarray, v: np.ndarray, tol: float
) -> np.ndarray:
    """Turn one optimal assignment into the lexicographically smallest optimal one.

    Row by row, the smallest tight column that still admits an optimal
    completion of the later rows is pinned. A single alternating path over
    tight edges settles most rows; when none exists the later rows are
    re-solved with the candidate column pinned and the cost compared.
    """
    n, m = c.shape
    assignment = assignment.copy()
    owner = np.full(m, -1, dtype=np.int64)
    owner[assignment] = np.arange(n)
    col_free = np.ones(m, dtype=bool)
    # duals stay fixed, so the tight edge set never changes
    tight = [np.flatnonzero(c[r] - u[r] - v <= tol) for r in range(n)]
    sum_tol = tol * (n + 1)

    for i in range(n):
        home = int(assignment[i])
        owner[home] = -1
        home_may_free = bool(v[home] >= -tol)
        moved = False
        for j in tight[i]:
            j = int(j)
            if j >= home:
                break
            if not col_free[j]:
                continue
            path = _alternating_path(tight, owner, col_free, j, home, home_may_free)
            if path is not None:
                # shift every holder along the path one column forward
                movers = [int(owner[col]) for col in path[:-1]]
                assignment[i] = path[0]
                for r, col in zip(movers, path[1:]):
                    assignment[r] = col
                owner[path[0]] = i
                for r, col in zip(movers, path[1:]):
                    owner[col] = r
                moved = True
                break
            target = float(c[np.arange(i, n), assignment[i:]].sum())
            rest = _completion(c, col_free, i, j, target, sum_tol)
            if rest is not None:
                assignment[i] = j
                assignment[i + 1:] = rest
                owner[:] = -1
                owner[rest] = np.arange(i + 1, n)
                owner[j] = i
                moved = True
                break
        if not moved:
            owner[home] = i
        col_free[assignment[i]] = False
    return assignment


def solve_assignment(values: np.ndarray) -> np.ndarray:
    """Lexicographically smallest minimum-cost injective map rows -> columns."""
    n, m = values.shape
    if n > m:
        raise InputError(f"insufficient proposals: N={n} rows > M={m} columns")
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    # Non-negative working copy; the optimum and its argmin are shift invariant.
    shifted = values - values.min()
    assignment, u, v = _shortest_augmenting_path(shifted)
    tol = TIE_RTOL * max(1.0, float(shifted.max()))
    return _lexicographic_refine(shifted, assignment, u, v, tol)


def _result(values: np.ndarray, assignment: np.ndarray) -> MatchResult:
    n, m = values.shape
    positives = frozenset(int(j) for j in assignment)
    return MatchResult(
        assignment=tuple(int(j) for j in assignment),
        positives=positives,
        negatives=frozenset(range(m)) - positives,
        total_cost=float(values[np.arange(n), assignment].sum()) if n else 0.0,
    )


def hungarian_match(costs: CostMatrix) -> MatchResult:
    return _result(costs.values, solve_assignment(costs.values))


def one_to_one_assign_arrays(
    gt_xy: np.ndarray, prop_xy: np.ndarray, conf: np.ndarray, cfg: MatchConfig = MatchConfig()
) -> MatchResult:
    values = cost_matrix_arrays(gt_xy, prop_xy, conf, cfg.tau)
    return _result(values, solve_assignment(values))


def one_to_one_assign(
    gt: Sequence[Point], proposals: Sequence[Prediction], cfg: MatchConfig = MatchConfig()
) -> MatchResult:
    return hungarian_match(build_cost_matrix(gt, proposals, cfg))
