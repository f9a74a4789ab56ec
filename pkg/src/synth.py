"""
Synthetic crowd scenes: seeded generator, prediction corruption, augmentation.

All randomness comes from splitmix64 so a (recipe, seed) pair gives the same
points on any platform. Gaussians use Box-Muller on two uniforms per draw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from src.core import InputError, Point, Prediction, Scene

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX_1 = 0xBF58476D1CE4E5B9
MIX_2 = 0x94D049BB133111EB

# Rejection sampling gives up after this many out-of-bounds draws for one point.
MAX_REJECTIONS = 10_000

DEFAULT_CONF_SCALE = 8.0


class Rng:
    """splitmix64 stream."""

    def __init__(self, seed: int) -> None:
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * MIX_1) & MASK64
        z = ((z ^ (z >> 27)) * MIX_2) & MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        """Uniform in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, a: float, b: float) -> float:
        return a + (b - a) * self.random()

    def randbelow(self, n: int) -> int:
        return min(int(self.random() * n), n - 1)

    def gauss(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        u1 = 1.0 - self.random()  # (0, 1], keeps log finite
        u2 = self.random()
        return mu + sigma * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


class SceneKind(str, Enum):
    UNIFORM = "uniform"
    CLUSTERS = "clusters"
    GRADIENT = "gradient"


@dataclass(frozen=True)
class SceneRecipe:
    kind: SceneKind = SceneKind.UNIFORM
    n_points: int = 30
    image_size: tuple[float, float] = (128.0, 128.0)
    cluster_count: int = 3
    spread: float = 4.0
    seed: int = 0
    scene_id: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", SceneKind(self.kind))
        w, h = self.image_size
        if self.n_points < 0:
            raise InputError(f"n_points must be >= 0, got {self.n_points}")
        if not (w > 0 and h > 0):
            raise InputError(f"image_size must be positive, got {self.image_size}")
        if self.kind is SceneKind.CLUSTERS and (self.cluster_count < 1 or not self.spread > 0):
            raise InputError(
                f"clusters need cluster_count >= 1 and spread > 0, "
                f"got {self.cluster_count}, {self.spread}"
            )

    @property
    def id(self) -> str:
        return self.scene_id or f"scene-{self.seed:06d}"


def _inside(x: float, y: float, w: float, h: float) -> bool:
    return 0.0 <= x < w and 0.0 <= y < h


def generate(recipe: SceneRecipe) -> Scene:
    rng = Rng(recipe.seed)
    w, h = recipe.image_size
    points: list[Point] = []

    if recipe.kind is SceneKind.UNIFORM:
        for _ in range(recipe.n_points):
            points.append(Point(rng.uniform(0.0, w), rng.uniform(0.0, h)))

    elif recipe.kind is SceneKind.GRADIENT:
        # density grows linearly with x: inverse CDF of p(x) ~ x
        for _ in range(recipe.n_points):
            x = min(w * math.sqrt(rng.random()), math.nextafter(w, 0.0))
            points.append(Point(x, rng.uniform(0.0, h)))

    else:
        centers = [(rng.uniform(0.0, w), rng.uniform(0.0, h)) for _ in range(recipe.cluster_count)]
        for _ in range(recipe.n_points):
            cx, cy = centers[rng.randbelow(len(centers))]
            for _ in range(MAX_REJECTIONS):
                x, y = rng.gauss(cx, recipe.spread), rng.gauss(cy, recipe.spread)
                if _inside(x, y, w, h):
                    break
            else:
                raise InputError(f"[{recipe.id}] rejection sampling failed near ({cx:.1f}, {cy:.1f})")
            points.append(Point(x, y))

    return Scene(recipe.id, tuple(points))


def corrupt(
    scene: Scene,
    jitter_sigma: float = 0.0,
    drop_rate: float = 0.0,
    dup_rate: float = 0.0,
    seed: int = 0,
    conf_scale: float = DEFAULT_CONF_SCALE,
    conf_noise: float = 0.0,
) -> Scene:
    """Predictions from ground truth: jittered, dropped (FN) and duplicated (FP).

    Confidence is exp(-r / conf_scale) * (1 - conf_noise * U) for a jitter of
    r px. Every GT point consumes the same number of draws whatever the rates,
    so two corruptions with one seed share their surviving predictions.
    """
    for name, rate in (("drop_rate", drop_rate), ("dup_rate", dup_rate), ("conf_noise", conf_noise)):
        if not 0.0 <= rate <= 1.0:
            raise InputError(f"{name} must be in [0, 1], got {rate}")
    if jitter_sigma < 0 or not conf_scale > 0:
        raise InputError(f"jitter_sigma must be >= 0 and conf_scale > 0, got {jitter_sigma}, {conf_scale}")

    rng = Rng(seed)

    def jittered(p: Point) -> Prediction:
        dx, dy = rng.gauss(0.0, jitter_sigma), rng.gauss(0.0, jitter_sigma)
        noise = rng.random()
        conf = math.exp(-math.hypot(dx, dy) / conf_scale) * (1.0 - conf_noise * noise)
        return Prediction(Point(p.x + dx, p.y + dy), conf)

    predictions: list[Prediction] = []
    for p in scene.ground_truth:
        drop = rng.random() < drop_rate
        kept = jittered(p)
        dup = rng.random() < dup_rate
        extra = jittered(p)
        if not drop:
            predictions.append(kept)
        if dup:
            predictions.append(extra)
    return scene.with_predictions(predictions)


def augment(
    scene: Scene,
    image_size: tuple[float, float],
    seed: int,
    crop: float = 128.0,
    scale_range: tuple[float, float] = (0.7, 1.3),
    flip_prob: float = 0.5,
) -> tuple[Scene, tuple[float, float]]:
    """Random rescale, fixed-size crop and horizontal flip of a scene's GT points.

    The scale factor is raised when needed so the shorter side stays >= crop.
    Returns the augmented scene and its new (width, height).
    """
    lo, hi = scale_range
    if not (0 < lo <= hi) or not crop > 0 or not 0.0 <= flip_prob <= 1.0:
        raise InputError(f"bad augmentation parameters: scale={scale_range} crop={crop} flip={flip_prob}")
    rng = Rng(seed)
    w, h = image_size
    scale = max(rng.uniform(lo, hi), crop / min(w, h))
    sw, sh = w * scale, h * scale
    cw, ch = min(crop, sw), min(crop, sh)
    x0 = rng.uniform(0.0, sw - cw)
    y0 = rng.uniform(0.0, sh - ch)
    flip = rng.random() < flip_prob

    points: list[Point] = []
    for p in scene.ground_truth:
        x, y = p.x * scale - x0, p.y * scale - y0
        if _inside(x, y, cw, ch):
            points.append(Point(cw - x if flip else x, y))
    # flipping maps x=0 to x=cw; keep the half-open image bounds
    points = [Point(min(p.x, math.nextafter(cw, 0.0)), p.y) for p in points]
    return Scene(scene.id, tuple(points)), (cw, ch)
