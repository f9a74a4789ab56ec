"""
Evaluation: density-normalized AP (nAP), counting errors and point P/R/F1.

A prediction is a true positive for ground-truth point p_i when

    ||p_hat - p_i||_2 / d_knn(p_i) < delta

and p_i was not already taken by a higher-ranked prediction. Flags from all
scenes are pooled into one confidence-ranked list before integrating the PR
curve.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from src.core import (
    DEFAULT_FALLBACK_RADIUS,
    DEFAULT_K,
    DensityContext,
    InputError,
    Scene,
    knn_density,
    pairwise_distances,
    points_array,
    predictions_arrays,
)

DEFAULT_DELTA = 0.5
DEFAULT_COUNT_THRESHOLD = 0.5
DEFAULT_DELTA_SWEEP: tuple[float, ...] = tuple(round(0.05 * i, 2) for i in range(1, 11))


class Flag(NamedTuple):
    confidence: float
    is_tp: bool


@dataclass(frozen=True)
class NapConfig:
    delta: float = DEFAULT_DELTA
    k: int = DEFAULT_K
    delta_sweep: tuple[float, ...] = DEFAULT_DELTA_SWEEP
    fallback_radius: float = DEFAULT_FALLBACK_RADIUS
    count_threshold: float = DEFAULT_COUNT_THRESHOLD
    association: str = "sequential"
    workers: int = 1

    def __post_init__(self) -> None:
        sweep = tuple(float(d) for d in self.delta_sweep)
        object.__setattr__(self, "delta_sweep", sweep)
        if not self.delta > 0 or any(d <= 0 for d in sweep):
            raise InputError(f"all deltas must be > 0, got delta={self.delta} sweep={sweep}")
        if list(sweep) != sorted(sweep):
            raise InputError(f"delta_sweep must be sorted ascending, got {sweep}")
        if self.k < 1:
            raise InputError(f"k must be >= 1, got {self.k}")
        if self.association not in ASSOCIATIONS:
            raise InputError(
                f"association must be one of {sorted(ASSOCIATIONS)}, got {self.association!r}"
            )
        if self.workers < 1:
            raise InputError(f"workers must be >= 1, got {self.workers}")

    @property
    def deltas(self) -> tuple[float, ...]:
        """Every delta evaluated: the sweep plus the primary delta."""
        return tuple(sorted(set(self.delta_sweep) | {float(self.delta)}))


@dataclass(frozen=True)
class PRCurve:
    ranked_flags: tuple[Flag, ...]
    total_gt: int
    points: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class NapReport:
    ap_per_delta: dict[float, float]
    nap_mean: float
    per_scene_counts: tuple[tuple[str, int, int], ...]
    curves: dict[float, PRCurve] = field(default_factory=dict, repr=False)


# ---------------------------------------------------------------------------
# Association
# ---------------------------------------------------------------------------

def _ranked(scene: Scene) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Prediction coordinates and confidences in rank order, plus the rank permutation."""
    coords, conf = predictions_arrays(scene.predictions or ())
    order = np.argsort(-conf, kind="stable")
    return coords[order], conf[order], order


def _normalized_distances(scene: Scene, ctx: DensityContext, coords: np.ndarray) -> np.ndarray:
    gt = points_array(scene.ground_truth)
    if len(ctx) != gt.shape[0]:
        raise InputError(
            f"[{scene.id}] density context has {len(ctx)} values for {gt.shape[0]} GT points"
        )
    return pairwise_distances(coords, gt) / ctx.d_knn[None, :]


def sequential_associate(scene: Scene, ctx: DensityContext, delta: float) -> list[Flag]:
    """Higher-confidence predictions claim ground truth first; each GT is used once."""
    coords, conf, _ = _ranked(scene)
    if conf.size == 0:
        return []
    norm = _normalized_distances(scene, ctx, coords)
    taken = np.zeros(norm.shape[1], dtype=bool)
    flags: list[Flag] = []
    for r in range(conf.size):
        is_tp = False
        if norm.shape[1]:
            row = np.where(taken, np.inf, norm[r])
            i = int(np.argmin(row))
            if row[i] < delta:
                taken[i] = True
                is_tp = True
        flags.append(Flag(float(conf[r]), is_tp))
    return flags


def greedy_associate(scene: Scene, ctx: DensityContext, delta: float) -> list[Flag]:
    """Pairs accepted by ascending normalized distance, ignoring confidence rank."""
    coords, conf, _ = _ranked(scene)
    if conf.size == 0:
        return []
    norm = _normalized_distances(scene, ctx, coords)
    ranks, gts = np.nonzero(norm < delta)
    tp = np.zeros(conf.size, dtype=bool)
    if ranks.size:
        # ties broken by prediction rank, then GT index
        order = np.lexsort((gts, ranks, norm[ranks, gts]))
        taken = np.zeros(norm.shape[1], dtype=bool)
        for r, i in zip(ranks[order], gts[order]):
            if not tp[r] and not taken[i]:
                tp[r] = True
                taken[i] = True
    return [Flag(float(c), bool(t)) for c, t in zip(conf, tp)]


ASSOCIATIONS: dict[str, Callable[[Scene, DensityContext, float], list[Flag]]] = {
    "sequential": sequential_associate,
    "greedy": greedy_associate,
}


# ---------------------------------------------------------------------------
# PR curve / AP
# ---------------------------------------------------------------------------

def pr_curve(flags: Sequence[Flag], total_gt: int) -> PRCurve:
    points: list[tuple[float, float]] = []
    tp = 0
    for rank, f in enumerate(flags, start=1):
        tp += int(f.is_tp)
        recall = tp / total_gt if total_gt > 0 else 0.0
        points.append((recall, tp / rank))
    return PRCurve(ranked_flags=tuple(flags), total_gt=total_gt, points=tuple(points))


def average_precision(flags: Sequence[Flag], total_gt: int) -> float:
    """Area under the precision-envelope PR curve, every operating point included."""
    if total_gt <= 0:
        # no ground truth anywhere: vacuously perfect only if nothing was predicted
        return 1.0 if len(flags) == 0 else 0.0
    if len(flags) == 0:
        return 0.0
    is_tp = np.fromiter((f.is_tp for f in flags), dtype=bool, count=len(flags))
    tp = np.cumsum(is_tp)
    recall = tp / total_gt
    precision = tp / np.arange(1, is_tp.size + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    recall_step = np.diff(np.concatenate(([0.0], recall)))
    return float(np.sum(recall_step * envelope))


# ---------------------------------------------------------------------------
# Dataset evaluation
# ---------------------------------------------------------------------------

def count_scene(scene: Scene, threshold: float = DEFAULT_COUNT_THRESHOLD) -> int:
    """Predictions with confidence strictly above threshold."""
    return sum(1 for p in scene.predictions or () if p.confidence > threshold)


def _require_predictions(scenes: Sequence[Scene]) -> None:
    missing = [s.id for s in scenes if s.predictions is None]
    if missing:
        raise InputError(f"scenes without predictions: {', '.join(missing[:5])}")


def _map_scenes(fn: Callable[[Scene], object], scenes: Sequence[Scene], workers: int) -> list:
    # Executor.map yields in submission order regardless of completion order.
    if workers <= 1 or len(scenes) <= 1:
        return [fn(s) for s in scenes]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, scenes))


def pooled_flags(
    scenes: Sequence[Scene], cfg: NapConfig, delta: float
) -> list[Flag]:
    """All scenes' flags in one list, ranked by confidence, ties by (scene id, rank)."""
    associate = ASSOCIATIONS[cfg.association]

    def per_scene(scene: Scene) -> list[Flag]:
        ctx = knn_density(scene.ground_truth, cfg.k, cfg.fallback_radius)
        return associate(scene, ctx, delta)

    keyed: list[tuple[float, str, int, Flag]] = []
    for scene, flags in zip(scenes, _map_scenes(per_scene, scenes, cfg.workers)):
        keyed.extend((-f.confidence, scene.id, r, f) for r, f in enumerate(flags))
    keyed.sort(key=lambda t: (t[0], t[1], t[2]))
    return [t[3] for t in keyed]


def nap_evaluate(scenes: Sequence[Scene], cfg: NapConfig = NapConfig()) -> NapReport:
    _require_predictions(scenes)
    total_gt = sum(s.n for s in scenes)

    ap_per_delta: dict[float, float] = {}
    curves: dict[float, PRCurve] = {}
    for delta in cfg.deltas:
        flags = pooled_flags(scenes, cfg, delta)
        ap_per_delta[delta] = average_precision(flags, total_gt)
        curves[delta] = pr_curve(flags, total_gt)

    sweep = cfg.delta_sweep or (float(cfg.delta),)
    nap_mean = math.fsum(ap_per_delta[d] for d in sweep) / len(sweep)
    counts = tuple((s.id, s.n, count_scene(s, cfg.count_threshold)) for s in scenes)
    return NapReport(
        ap_per_delta=ap_per_delta, nap_mean=nap_mean, per_scene_counts=counts, curves=curves
    )


def mae_mse(estimates: Sequence[int], truths: Sequence[int]) -> tuple[float, float]:
    """MAE and root-mean-square count error (reported as "MSE" in crowd counting)."""
    if len(estimates) == 0 or len(estimates) != len(truths):
        raise InputError(
            f"mae_mse needs equal non-empty inputs, got {len(estimates)} and {len(truths)}"
        )
    err = np.asarray(estimates, dtype=np.float64) - np.asarray(truths, dtype=np.float64)
    return float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err * err)))


def localization_prf(
    scenes: Sequence[Scene], cfg: NapConfig = NapConfig(), conf_threshold: float = DEFAULT_COUNT_THRESHOLD
) -> tuple[float, float, float]:
    """Point-level precision/recall/F1 at cfg.delta on predictions above conf_threshold."""
    _require_predictions(scenes)
    tp = fp = 0
    total_gt = 0
    for scene in scenes:
        kept = [p for p in scene.predictions or () if p.confidence > conf_threshold]
        ctx = knn_density(scene.ground_truth, cfg.k, cfg.fallback_radius)
        flags = sequential_associate(scene.with_predictions(kept), ctx, cfg.delta)
        hits = sum(f.is_tp for f in flags)
        tp += hits
        fp += len(flags) - hits
        total_gt += scene.n
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / total_gt if total_gt else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1
