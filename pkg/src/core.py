"""
Core geometry: head points, predictions, scenes and kNN density scale.

Every other module builds on these types. Coordinates are pixels (float64),
confidences live in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_K = 3
DEFAULT_FALLBACK_RADIUS = 32.0

# Pairwise distance blocks are computed this many query rows at a time.
KNN_CHUNK_ROWS = 1024


class InputError(ValueError):
    """Bad input or violated precondition (CLI exit code 2)."""


@dataclass(frozen=True, slots=True)
class Point:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InputError(f"Point coordinates must be finite, got ({self.x}, {self.y})")


@dataclass(frozen=True, slots=True)
class Prediction:
    point: Point
    confidence: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.confidence <= 1.0):
            raise InputError(f"confidence must be in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class Scene:
    id: str
    ground_truth: tuple[Point, ...] = ()
    predictions: tuple[Prediction, ...] | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise InputError("scene id must be non-empty")
        object.__setattr__(self, "ground_truth", tuple(self.ground_truth))
        if self.predictions is not None:
            object.__setattr__(self, "predictions", tuple(self.predictions))

    @property
    def n(self) -> int:
        return len(self.ground_truth)

    @property
    def m(self) -> int:
        return 0 if self.predictions is None else len(self.predictions)

    def with_predictions(self, predictions: Sequence[Prediction]) -> Scene:
        return Scene(self.id, self.ground_truth, tuple(predictions))


@dataclass(frozen=True)
class DensityContext:
    k: int
    d_knn: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return int(self.d_knn.shape[0])


# ---------------------------------------------------------------------------
# Array helpers
# ---------------------------------------------------------------------------

def points_array(points: Sequence[Point]) -> np.ndarray:
    """(N, 2) float64 array of point coordinates."""
    if len(points) == 0:
        return np.zeros((0, 2), dtype=np.float64)
    return np.array([(p.x, p.y) for p in points], dtype=np.float64)


def predictions_arrays(predictions: Sequence[Prediction]) -> tuple[np.ndarray, np.ndarray]:
    """Split predictions into (M, 2) coordinates and (M,) confidences."""
    if len(predictions) == 0:
        return np.zeros((0, 2), dtype=np.float64), np.zeros(0, dtype=np.float64)
    coords = np.array([(p.point.x, p.point.y) for p in predictions], dtype=np.float64)
    conf = np.array([p.confidence for p in predictions], dtype=np.float64)
    return coords, conf


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(len(a), len(b)) Euclidean distance matrix, same arithmetic as euclidean_distance."""
    dx = a[:, None, 0] - b[None, :, 0]
    dy = a[:, None, 1] - b[None, :, 1]
    return np.sqrt(dx * dx + dy * dy)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def euclidean_distance(a: Point, b: Point) -> float:
    dx = a.x - b.x
    dy = a.y - b.y
    return math.sqrt(dx * dx + dy * dy)


def knn_density(
    ground_truth: Sequence[Point],
    k: int = DEFAULT_K,
    fallback_radius: float = DEFAULT_FALLBACK_RADIUS,
) -> DensityContext:
    """Average distance from each GT point to its k nearest other GT points.

    The neighbour count is clamped to N-1; a lone point gets fallback_radius.
    """
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    if fallback_radius <= 0:
        raise InputError(f"fallback_radius must be > 0, got {fallback_radius}")

    pts = points_array(ground_truth)
    n = pts.shape[0]
    if n == 0:
        return DensityContext(k=k, d_knn=np.zeros(0, dtype=np.float64))
    if n == 1:
        return DensityContext(k=k, d_knn=np.array([fallback_radius], dtype=np.float64))

    kk = min(k, n - 1)
    d_knn = np.empty(n, dtype=np.float64)
    for start in range(0, n, KNN_CHUNK_ROWS):
        stop = min(start + KNN_CHUNK_ROWS, n)
        block = pairwise_distances(pts[start:stop], pts)
        block[np.arange(stop - start), np.arange(start, stop)] = np.inf
        nearest = np.sort(block, axis=1)[:, :kk]
        d_knn[start:stop] = nearest.sum(axis=1) / kk

    # Coincident GT points give a zero scale; keep the criterion total.
    d_knn[d_knn <= 0] = fallback_radius
    return DensityContext(k=k, d_knn=d_knn)


def match_criterion(
    pred: Point,
    gt_index: int,
    ctx: DensityContext,
    gt: Sequence[Point],
    delta: float,
) -> bool:
    if delta <= 0:
        raise InputError(f"delta must be > 0, got {delta}")
    if not 0 <= gt_index < len(gt):
        raise InputError(f"gt_index {gt_index} out of range for {len(gt)} points")
    return euclidean_distance(pred, gt[gt_index]) / float(ctx.d_knn[gt_index]) < delta


def nearest_neighbor_distances(ground_truth: Sequence[Point]) -> np.ndarray:
    """Distance from each GT point to its nearest other GT point (empty when N < 2)."""
    pts = points_array(ground_truth)
    if pts.shape[0] < 2:
        return np.zeros(0, dtype=np.float64)
    dist = pairwise_distances(pts, pts)
    np.fill_diagonal(dist, np.inf)
    return dist.min(axis=1)


def nn_distance_quantile(scenes: Sequence[Scene], q: float) -> float:
    """Pooled q-quantile of nearest-neighbour distances; used to size points_per_cell."""
    if not 0.0 <= q <= 1.0:
        raise InputError(f"quantile must be in [0, 1], got {q}")
    pooled = [nearest_neighbor_distances(s.ground_truth) for s in scenes]
    values = np.concatenate(pooled) if pooled else np.zeros(0)
    if values.size == 0:
        return float("nan")
    return float(np.quantile(values, q))
