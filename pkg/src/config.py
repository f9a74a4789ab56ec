"""
Run configuration: one merged view of every component config, plus the
flat key=value config file the CLI accepts.

    # eval.conf
    delta = 0.5
    delta-sweep = 0.05,0.1,0.25,0.5
    k = 3

Keys mirror the command-line flag names (dashes or underscores). Values set
on the command line win over the file, the file wins over built-in defaults.
"""

from __future__ import annotations

import argparse
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from src.assignment import MatchConfig
from src.core import InputError
from src.metrics import NapConfig
from src.proposal import DecodeParams, FeatureGridSpec, LayoutKind
from src.trainer import LossParams, Strategy, TrainConfig


def load_config_file(path: Path | str) -> dict[str, str]:
    """Parse key=value lines; `#` starts a comment, blank lines are skipped."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"Missing required file: {path}")
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise InputError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        if key in values:
            raise InputError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def _parse_bool(key: str, value: str) -> bool:
    lowered = value.lower()
    if lowered in {"1", "true", "yes", "on"}:
        return True
    if lowered in {"0", "false", "no", "off"}:
        return False
    raise InputError(f"config key {key!r} expects a boolean, got {value!r}")


def apply_config_defaults(parser: argparse.ArgumentParser, values: dict[str, str]) -> None:
    """Install file values as parser defaults so explicit flags still override them.

    String defaults go through each argument's `type=` at parse time; switches
    (store_true) are converted here.
    """
    actions = {a.dest: a for a in parser._actions if a.dest not in {"help", "config"}}
    unknown = sorted(set(values) - set(actions))
    if unknown:
        raise InputError(f"unknown config keys: {', '.join(unknown)}")
    defaults: dict[str, Any] = {}
    for key, value in values.items():
        action = actions[key]
        # argparse never checks choices against defaults
        if action.choices is not None and value not in action.choices:
            raise InputError(
                f"config key {key!r} must be one of {', '.join(map(str, action.choices))}, got {value!r}"
            )
        defaults[key] = _parse_bool(key, value) if action.nargs == 0 else value
    parser.set_defaults(**defaults)


def parse_float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def parse_int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


@dataclass(frozen=True)
class RunConfig:
    nap: NapConfig = field(default_factory=NapConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    loss: LossParams = field(default_factory=LossParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeParams = field(default_factory=DecodeParams)
    stride: int = 8
    points_per_cell: int = 4
    layout: LayoutKind = LayoutKind.GRID
    strategy: Strategy = Strategy.ONE_TO_ONE
    paths: dict[str, str] = field(default_factory=dict)

    def grid_for(self, image_size: tuple[float, float]) -> FeatureGridSpec:
        w, h = image_size
        return FeatureGridSpec.for_image(w, h, self.stride, self.points_per_cell)

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_namespace(cls, args: argparse.Namespace) -> RunConfig:
        """Build component configs from whichever flags a subcommand defines."""
        given = {k: v for k, v in vars(args).items() if v is not None}

        def pick(*names: str) -> dict[str, Any]:
            return {n: given[n] for n in names if n in given}

        nap_kwargs = pick("delta", "k", "delta_sweep", "fallback_radius", "association", "workers")
        if "threshold" in given:
            nap_kwargs["count_threshold"] = given["threshold"]
        train_kwargs = pick(
            "steps", "optimizer", "seed", "init_noise", "neg_threshold", "verbose", "log_every",
        )
        if "lr" in given:
            train_kwargs["learning_rate"] = given["lr"]
        if "threshold" in given:
            train_kwargs["count_threshold"] = given["threshold"]

        loss_kwargs = pick("lambda1", "lambda2", "tau")
        paths = {
            k: str(v) for k, v in given.items()
            if k in {"gt", "pred", "out", "pred_out", "out_csv", "pr_csv", "counts_csv",
                     "pr_svg", "points_out", "svg"}
        }
        return cls(
            nap=NapConfig(**nap_kwargs),
            match=MatchConfig(**pick("tau")),
            loss=LossParams(**loss_kwargs),
            train=TrainConfig(**train_kwargs),
            decode=DecodeParams(**pick("gamma")),
            stride=given.get("stride", 8),
            points_per_cell=given.get("points_per_cell", 4),
            layout=LayoutKind(given.get("layout", LayoutKind.GRID)),
            strategy=Strategy(given.get("strategy", Strategy.ONE_TO_ONE)),
            paths=paths,
        )
