"""
Point proposals: reference layouts, offset decoding and baseline target assignment.

Each cell of an H x W feature grid covers an s x s image patch and holds K
reference points R_k. A proposal decodes as

    p_hat = R_k + gamma * (dx, dy)

with confidence softmax(logits)[head].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from src.core import InputError, Point, Prediction, pairwise_distances, points_array, predictions_arrays

DEFAULT_STRIDE = 8
DEFAULT_POINTS_PER_CELL = 4
DEFAULT_GAMMA = 100.0
# Nearest-GT baseline: proposals farther than this many strides are negatives.
NEG_THRESHOLD_STRIDES = 1.5

BACKGROUND, HEAD = 0, 1


class LayoutKind(str, Enum):
    CENTER = "center"
    GRID = "grid"


@dataclass(frozen=True)
class FeatureGridSpec:
    height: int
    width: int
    stride: int = DEFAULT_STRIDE
    points_per_cell: int = DEFAULT_POINTS_PER_CELL

    def __post_init__(self) -> None:
        if min(self.height, self.width, self.points_per_cell) < 1 or self.stride < 1:
            raise InputError(
                f"grid needs H, W, K >= 1 and s >= 1, got H={self.height} W={self.width} "
                f"K={self.points_per_cell} s={self.stride}"
            )

    @classmethod
    def for_image(
        cls,
        width_px: float,
        height_px: float,
        stride: int = DEFAULT_STRIDE,
        points_per_cell: int = DEFAULT_POINTS_PER_CELL,
    ) -> FeatureGridSpec:
        """Smallest grid whose patches cover a width_px x height_px image."""
        return cls(
            height=max(1, math.ceil(height_px / stride)),
            width=max(1, math.ceil(width_px / stride)),
            stride=stride,
            points_per_cell=points_per_cell,
        )

    @property
    def total_proposals(self) -> int:
        return self.height * self.width * self.points_per_cell


@dataclass(frozen=True)
class ReferenceLayout:
    kind: LayoutKind
    points: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return int(self.points.shape[0])


@dataclass(frozen=True)
class DecodeParams:
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self) -> None:
        if not self.gamma > 0:
            raise InputError(f"gamma must be > 0, got {self.gamma}")


@dataclass
class ProposalModel:
    """Trainable state: per-proposal offsets (M, 2) and (background, head) logits (M, 2)."""

    spec: FeatureGridSpec
    layout: ReferenceLayout
    offsets: np.ndarray = field(repr=False)
    logits: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        m = self.spec.total_proposals
        if len(self.layout) != m or self.offsets.shape != (m, 2) or self.logits.shape != (m, 2):
            raise InputError(
                f"model shapes disagree with grid of {m} proposals: layout={len(self.layout)} "
                f"offsets={self.offsets.shape} logits={self.logits.shape}"
            )
        if not (np.all(np.isfinite(self.offsets)) and np.all(np.isfinite(self.logits))):
            raise InputError("model offsets and logits must be finite")

    def copy(self) -> ProposalModel:
        return ProposalModel(self.spec, self.layout, self.offsets.copy(), self.logits.copy())


# ---------------------------------------------------------------------------
# Layout + decoding
# ---------------------------------------------------------------------------

def make_layout(spec: FeatureGridSpec, kind: LayoutKind | str = LayoutKind.GRID) -> ReferenceLayout:
    """Reference points ordered row-major by cell, then by k within the cell."""
    kind = LayoutKind(kind)
    k = spec.points_per_cell
    s = float(spec.stride)

    if kind is LayoutKind.CENTER:
        sub = np.full((k, 2), 0.5)
    else:
        side = math.isqrt(k)
        if side * side != k:
            raise InputError(f"grid layout needs a perfect-square K, got K={k}")
        frac = (np.arange(side) + 0.5) / side
        # x sub-index varies fastest within a cell
        sub_y, sub_x = np.meshgrid(frac, frac, indexing="ij")
        sub = np.stack([sub_x.ravel(), sub_y.ravel()], axis=1)

    rows, cols = np.meshgrid(np.arange(spec.height), np.arange(spec.width), indexing="ij")
    origin = np.stack([cols.ravel(), rows.ravel()], axis=1).astype(np.float64)
    points = ((origin[:, None, :] + sub[None, :, :]) * s).reshape(-1, 2)
    return ReferenceLayout(kind=kind, points=points)


def init_model(
    spec: FeatureGridSpec,
    kind: LayoutKind | str = LayoutKind.GRID,
    offset_noise: np.ndarray | None = None,
) -> ProposalModel:
    """Zero logits (confidence 0.5 everywhere); offsets zero unless noise is given."""
    m = spec.total_proposals
    offsets = np.zeros((m, 2)) if offset_noise is None else np.asarray(offset_noise, dtype=np.float64)
    return ProposalModel(spec, make_layout(spec, kind), offsets.copy(), np.zeros((m, 2)))


def head_confidence(logits: np.ndarray) -> np.ndarray:
    """Two-class softmax head probability, as a tanh of the logit difference."""
    diff = logits[:, HEAD] - logits[:, BACKGROUND]
    return 0.5 * (1.0 + np.tanh(0.5 * diff))


def decode_arrays(model: ProposalModel, params: DecodeParams = DecodeParams()) -> tuple[np.ndarray, np.ndarray]:
    return model.layout.points + params.gamma * model.offsets, head_confidence(model.logits)


def decode(model: ProposalModel, params: DecodeParams = DecodeParams()) -> list[Prediction]:
    coords, conf = decode_arrays(model, params)
    # tanh can round a hair outside [0, 1]
    conf = np.clip(conf, 0.0, 1.0)
    return [Prediction(Point(float(x), float(y)), float(c)) for (x, y), c in zip(coords, conf)]


# ---------------------------------------------------------------------------
# Baseline target assignment strategies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TargetAssignment:
    """GT/proposal pairs from a many-to-one strategy; duplicates on either side allowed."""

    pairs: tuple[tuple[int, int], ...]
    positives: frozenset[int]
    negatives: frozenset[int]

    @property
    def positive_count(self) -> int:
        return len(self.positives)

    @property
    def distinct_gt(self) -> int:
        return len({i for i, _ in self.pairs})


def _target_assignment(pairs: list[tuple[int, int]], m: int) -> TargetAssignment:
    positives = frozenset(j for _, j in pairs)
    return TargetAssignment(tuple(pairs), positives, frozenset(range(m)) - positives)


def assign_nearest_proposal_arrays(gt_xy: np.ndarray, prop_xy: np.ndarray) -> TargetAssignment:
    m = prop_xy.shape[0]
    if m == 0:
        raise InputError("nearest-proposal assignment needs at least one proposal")
    if gt_xy.shape[0] == 0:
        return _target_assignment([], m)
    nearest = np.argmin(pairwise_distances(gt_xy, prop_xy), axis=1)
    return _target_assignment([(i, int(j)) for i, j in enumerate(nearest)], m)


def assign_nearest_gt_arrays(
    gt_xy: np.ndarray, prop_xy: np.ndarray, neg_threshold: float
) -> TargetAssignment:
    if not neg_threshold > 0:
        raise InputError(f"neg_threshold must be > 0, got {neg_threshold}")
    m = prop_xy.shape[0]
    if gt_xy.shape[0] == 0 or m == 0:
        return _target_assignment([], m)
    dist = pairwise_distances(prop_xy, gt_xy)
    nearest = np.argmin(dist, axis=1)
    within = dist[np.arange(m), nearest] <= neg_threshold
    return _target_assignment([(int(nearest[j]), j) for j in np.flatnonzero(within)], m)


def assign_nearest_proposal(gt: Sequence[Point], proposals: Sequence[Prediction]) -> TargetAssignment:
    """Every GT takes its nearest proposal; collisions merge GT and under-count."""
    return assign_nearest_proposal_arrays(points_array(gt), predictions_arrays(proposals)[0])


def assign_nearest_gt(
    gt: Sequence[Point], proposals: Sequence[Prediction], neg_threshold: float
) -> TargetAssignment:
    """Every proposal within neg_threshold px of a GT targets it; duplicates over-count."""
    return assign_nearest_gt_arrays(points_array(gt), predictions_arrays(proposals)[0], neg_threshold)


def default_neg_threshold(spec: FeatureGridSpec) -> float:
    return NEG_THRESHOLD_STRIDES * spec.stride
