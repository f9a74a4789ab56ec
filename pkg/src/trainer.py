"""
Desk-scale trainer: matching loss, analytic gradients and a per-scene optimizer.

    L_cls = -(1/M) * [ sum_pos log c_hat + lambda1 * sum_neg log(1 - c_hat) ]
    L_loc = (1/P) * sum_pairs ||p_i - p_hat_j||^2      (P = N for one-to-one)
    L     = L_cls + lambda2 * L_loc

The assignment is a constant of the backward pass. Each step decodes the
proposals, assigns targets with the chosen strategy, and updates offsets and
logits with gradient descent or Adam.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Protocol

import numpy as np

from src.assignment import DEFAULT_TAU, MatchConfig, MatchResult, one_to_one_assign_arrays
from src.core import InputError, Scene, points_array
from src.metrics import DEFAULT_COUNT_THRESHOLD
from src.proposal import (
    BACKGROUND,
    HEAD,
    DecodeParams,
    FeatureGridSpec,
    LayoutKind,
    ProposalModel,
    TargetAssignment,
    assign_nearest_gt_arrays,
    assign_nearest_proposal_arrays,
    decode_arrays,
    default_neg_threshold,
    init_model,
)
from src.synth import Rng

DEFAULT_LAMBDA1 = 0.5
DEFAULT_LAMBDA2 = 2e-4
DEFAULT_LEARNING_RATE = 1e-2
DEFAULT_STEPS = 500

LOG_CLAMP = 1e-12
# Gradient descent halves its learning rate at most this many times per step.
MAX_HALVINGS = 30


class Optimizer(str, Enum):
    GRADIENT_DESCENT = "gd"
    ADAM = "adam"


class Strategy(str, Enum):
    ONE_TO_ONE = "one2one"
    NEAREST_GT = "nearest-gt"
    NEAREST_PROPOSAL = "nearest-proposal"


class Assignment(Protocol):
    @property
    def pairs(self) -> tuple[tuple[int, int], ...]: ...

    @property
    def positives(self) -> frozenset[int]: ...

    @property
    def negatives(self) -> frozenset[int]: ...


@dataclass(frozen=True)
class LossParams:
    lambda1: float = DEFAULT_LAMBDA1
    lambda2: float = DEFAULT_LAMBDA2
    tau: float = DEFAULT_TAU

    def __post_init__(self) -> None:
        if min(self.lambda1, self.lambda2, self.tau) <= 0:
            raise InputError(f"loss weights must be > 0, got {self}")


@dataclass(frozen=True)
class LossBreakdown:
    l_cls: float
    l_loc: float
    total: float


@dataclass(frozen=True)
class Gradients:
    offsets: np.ndarray
    logits: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = DEFAULT_LEARNING_RATE
    steps: int = DEFAULT_STEPS
    optimizer: Optimizer = Optimizer.ADAM
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # gradient descent only: halve the step until the loss does not increase
    backtrack: bool = True
    # std-dev (px) of the seeded initial offset jitter; 0 starts on the reference points
    init_noise: float = 0.0
    count_threshold: float = DEFAULT_COUNT_THRESHOLD
    neg_threshold: float | None = None
    verbose: bool = False
    log_every: int = 100

    def __post_init__(self) -> None:
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))
        if not self.learning_rate > 0 or self.steps < 1:
            raise InputError(
                f"need learning_rate > 0 and steps >= 1, got {self.learning_rate}, {self.steps}"
            )
        if self.init_noise < 0:
            raise InputError(f"init_noise must be >= 0, got {self.init_noise}")


@dataclass(frozen=True)
class StepRecord:
    step: int
    loss: LossBreakdown
    count: int
    positives: int
    distinct_gt: int

    def as_row(self) -> dict[str, float | int]:
        return {"step": self.step, **asdict(self.loss), "count": self.count,
                "positives": self.positives, "distinct_gt": self.distinct_gt}


@dataclass
class FitResult:
    model: ProposalModel
    history: list[StepRecord] = field(default_factory=list)
    final_assignment: Assignment | None = None

    @property
    def final_count(self) -> int:
        return self.history[-1].count


# ---------------------------------------------------------------------------
# Loss + gradients
# ---------------------------------------------------------------------------

def _pair_arrays(match: Assignment) -> tuple[np.ndarray, np.ndarray]:
    pairs = np.asarray(match.pairs, dtype=np.int64).reshape(-1, 2)
    return pairs[:, 0], pairs[:, 1]


def _index(ids: frozenset[int]) -> np.ndarray:
    return np.fromiter(sorted(ids), dtype=np.int64, count=len(ids))


def _loss_arrays(
    gt_xy: np.ndarray, coords: np.ndarray, conf: np.ndarray, match: Assignment, params: LossParams
) -> LossBreakdown:
    m = conf.size
    c = np.clip(conf, LOG_CLAMP, 1.0 - LOG_CLAMP)
    pos, neg = _index(match.positives), _index(match.negatives)
    l_cls = -(np.sum(np.log(c[pos])) + params.lambda1 * np.sum(np.log1p(-c[neg]))) / m

    gi, pj = _pair_arrays(match)
    if gi.size:
        diff = coords[pj] - gt_xy[gi]
        l_loc = float(np.sum(diff * diff)) / gi.size
    else:
        l_loc = 0.0
    l_cls = float(l_cls)
    return LossBreakdown(l_cls=l_cls, l_loc=l_loc, total=l_cls + params.lambda2 * l_loc)


def loss(
    scene: Scene,
    model: ProposalModel,
    match: Assignment,
    params: LossParams = LossParams(),
    decode_params: DecodeParams = DecodeParams(),
) -> LossBreakdown:
    coords, conf = decode_arrays(model, decode_params)
    return _loss_arrays(points_array(scene.ground_truth), coords, conf, match, params)


def _gradient_arrays(
    gt_xy: np.ndarray,
    coords: np.ndarray,
    conf: np.ndarray,
    match: Assignment,
    params: LossParams,
    gamma: float,
) -> Gradients:
    m = conf.size
    g_offsets = np.zeros((m, 2))
    gi, pj = _pair_arrays(match)
    if gi.size:
        # d/d(offset) of lambda2 * L_loc; offsets enter p_hat scaled by gamma
        np.add.at(g_offsets, pj, params.lambda2 * (2.0 / gi.size) * gamma * (coords[pj] - gt_xy[gi]))

    # dL_cls / d(head - background logit difference); zero where the log argument is clamped
    live = (conf > LOG_CLAMP) & (conf < 1.0 - LOG_CLAMP)
    g_diff = np.zeros(m)
    pos, neg = _index(match.positives), _index(match.negatives)
    g_diff[pos] = -(1.0 - conf[pos]) / m
    g_diff[neg] = params.lambda1 * conf[neg] / m
    g_diff[~live] = 0.0

    g_logits = np.zeros((m, 2))
    g_logits[:, HEAD] = g_diff
    g_logits[:, BACKGROUND] = -g_diff
    return Gradients(offsets=g_offsets, logits=g_logits)


def loss_gradients(
    scene: Scene,
    model: ProposalModel,
    match: Assignment,
    params: LossParams = LossParams(),
    decode_params: DecodeParams = DecodeParams(),
) -> Gradients:
    coords, conf = decode_arrays(model, decode_params)
    return _gradient_arrays(
        points_array(scene.ground_truth), coords, conf, match, params, decode_params.gamma
    )


def finite_difference_gradients(
    scene: Scene,
    model: ProposalModel,
    match: Assignment,
    params: LossParams = LossParams(),
    decode_params: DecodeParams = DecodeParams(),
    h: float = 1e-5,
) -> Gradients:
    """Central differences of the total loss with the assignment held fixed."""
    perturbed = model.copy()
    grads: dict[str, np.ndarray] = {}
    for name in ("offsets", "logits"):
        values = getattr(perturbed, name)
        out = np.zeros_like(values)
        for idx in np.ndindex(values.shape):
            saved = values[idx]
            values[idx] = saved + h
            up = loss(scene, perturbed, match, params, decode_params).total
            values[idx] = saved - h
            down = loss(scene, perturbed, match, params, decode_params).total
            values[idx] = saved
            out[idx] = (up - down) / (2.0 * h)
        grads[name] = out
    return Gradients(**grads)


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

class GradientDescent:
    def __init__(self, learning_rate: float) -> None:
        self.learning_rate = learning_rate

    def step(self, model: ProposalModel, grads: Gradients) -> ProposalModel:
        out = model.copy()
        out.offsets -= self.learning_rate * grads.offsets
        out.logits -= self.learning_rate * grads.logits
        return out


class Adam:
    def __init__(self, cfg: TrainConfig, model: ProposalModel) -> None:
        self.cfg = cfg
        self.t = 0
        self.m = {"offsets": np.zeros_like(model.offsets), "logits": np.zeros_like(model.logits)}
        self.v = {"offsets": np.zeros_like(model.offsets), "logits": np.zeros_like(model.logits)}

    def step(self, model: ProposalModel, grads: Gradients) -> ProposalModel:
        cfg = self.cfg
        self.t += 1
        out = model.copy()
        for name in ("offsets", "logits"):
            g = getattr(grads, name)
            self.m[name] = cfg.beta1 * self.m[name] + (1.0 - cfg.beta1) * g
            self.v[name] = cfg.beta2 * self.v[name] + (1.0 - cfg.beta2) * g * g
            m_hat = self.m[name] / (1.0 - cfg.beta1 ** self.t)
            v_hat = self.v[name] / (1.0 - cfg.beta2 ** self.t)
            values = getattr(out, name)
            values -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
        return out


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def assign_targets(
    strategy: Strategy,
    gt_xy: np.ndarray,
    coords: np.ndarray,
    conf: np.ndarray,
    tau: float,
    neg_threshold: float,
) -> Assignment:
    strategy = Strategy(strategy)
    if strategy is Strategy.ONE_TO_ONE:
        return one_to_one_assign_arrays(gt_xy, coords, conf, MatchConfig(tau=tau))
    if strategy is Strategy.NEAREST_GT:
        return assign_nearest_gt_arrays(gt_xy, coords, neg_threshold)
    return assign_nearest_proposal_arrays(gt_xy, coords)


def distinct_gt(match: Assignment) -> int:
    return len({i for i, _ in match.pairs})


def _initial_model(spec: FeatureGridSpec, layout: LayoutKind | str, cfg: TrainConfig, gamma: float) -> ProposalModel:
    if cfg.init_noise == 0:
        return init_model(spec, layout)
    rng = Rng(cfg.seed)
    noise = np.array(
        [rng.gauss(0.0, cfg.init_noise) / gamma for _ in range(2 * spec.total_proposals)]
    ).reshape(-1, 2)
    return init_model(spec, layout, noise)


def fit_scene(
    scene: Scene,
    spec: FeatureGridSpec,
    cfg: TrainConfig = TrainConfig(),
    params: LossParams = LossParams(),
    strategy: Strategy | str = Strategy.ONE_TO_ONE,
    layout: LayoutKind | str = LayoutKind.GRID,
    decode_params: DecodeParams = DecodeParams(),
) -> FitResult:
    """Optimize one scene's proposals; history[t] describes the model before update t.

    The last history entry (step == cfg.steps) is the final model.
    """
    strategy = Strategy(strategy)
    n, m = scene.n, spec.total_proposals
    if m <= n:
        raise InputError(f"[{scene.id}] need more proposals than GT points, got M={m} <= N={n}")

    gt_xy = points_array(scene.ground_truth)
    neg_threshold = cfg.neg_threshold if cfg.neg_threshold is not None else default_neg_threshold(spec)
    model = _initial_model(spec, layout, cfg, decode_params.gamma)
    gd = GradientDescent(cfg.learning_rate)
    adam = Adam(cfg, model)

    def evaluate(mdl: ProposalModel) -> tuple[Assignment, LossBreakdown, np.ndarray]:
        coords, conf = decode_arrays(mdl, decode_params)
        match = assign_targets(strategy, gt_xy, coords, conf, params.tau, neg_threshold)
        return match, _loss_arrays(gt_xy, coords, conf, match, params), conf

    def record(step: int, match: Assignment, breakdown: LossBreakdown, conf: np.ndarray) -> StepRecord:
        return StepRecord(
            step=step,
            loss=breakdown,
            count=int(np.sum(conf > cfg.count_threshold)),
            positives=len(match.positives),
            distinct_gt=distinct_gt(match),
        )

    result = FitResult(model=model)
    match, breakdown, conf = evaluate(model)
    for step in range(cfg.steps):
        result.history.append(record(step, match, breakdown, conf))
        if cfg.verbose and step % cfg.log_every == 0:
            print(
                f"[train] {scene.id} {strategy.value} step {step}/{cfg.steps} "
                f"total={breakdown.total:.6g} count={result.history[-1].count}",
                flush=True,
            )

        coords, _ = decode_arrays(model, decode_params)
        grads = _gradient_arrays(gt_xy, coords, conf, match, params, decode_params.gamma)

        if cfg.optimizer is Optimizer.ADAM:
            model = adam.step(model, grads)
            match, breakdown, conf = evaluate(model)
            continue

        candidate = gd.step(model, grads)
        cand_match, cand_breakdown, cand_conf = evaluate(candidate)
        halvings = 0
        while cfg.backtrack and cand_breakdown.total > breakdown.total and halvings < MAX_HALVINGS:
            gd.learning_rate *= 0.5
            halvings += 1
            candidate = gd.step(model, grads)
            cand_match, cand_breakdown, cand_conf = evaluate(candidate)
        if cfg.backtrack and cand_breakdown.total > breakdown.total:
            continue
        model, match, breakdown, conf = candidate, cand_match, cand_breakdown, cand_conf

    result.model = model
    result.history.append(record(cfg.steps, match, breakdown, conf))
    result.final_assignment = match
    if cfg.verbose:
        last = result.history[-1]
        print(
            f"[train] {scene.id} {strategy.value} done: total={last.loss.total:.6g} "
            f"count={last.count} (N={n})",
            flush=True,
        )
    return result


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """Largest |a - n| / max(|a|, |n|, floor) over all coordinates."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0


def loss_is_finite(breakdown: LossBreakdown) -> bool:
    return all(math.isfinite(v) for v in (breakdown.l_cls, breakdown.l_loc, breakdown.total))
