"""
Config file parsing and flag -> component config mapping.

Run from repo root:
    python -m pytest tests/test_config.py -v
"""

from __future__ import annotations

import argparse

import pytest

from src.config import (
    RunConfig,
    apply_config_defaults,
    load_config_file,
    parse_float_list,
    parse_int_list,
)
from src.core import InputError
from src.proposal import LayoutKind
from src.trainer import Optimizer, Strategy


def test_load_config_file(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text(
        "# evaluation\n"
        "delta-sweep = 0.1, 0.5\n"
        "\n"
        "k=4   # neighbours\n"
        "verbose = yes\n",
        encoding="utf-8",
    )
    assert load_config_file(path) == {"delta_sweep": "0.1, 0.5", "k": "4", "verbose": "yes"}


def test_load_config_file_errors(tmp_path):
    with pytest.raises(InputError, match="Missing required file"):
        load_config_file(tmp_path / "absent.conf")
    bad = tmp_path / "bad.conf"
    bad.write_text("delta 0.5\n", encoding="utf-8")
    with pytest.raises(InputError, match="bad.conf:1: expected key=value"):
        load_config_file(bad)
    dup = tmp_path / "dup.conf"
    dup.write_text("k = 1\nk = 2\n", encoding="utf-8")
    with pytest.raises(InputError, match="duplicate key"):
        load_config_file(dup)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser()
    p.add_argument("--config")
    p.add_argument("--delta", type=float)
    p.add_argument("--delta-sweep", type=parse_float_list)
    p.add_argument("--verbose", action="store_true")
    return p


def test_config_defaults_lose_to_flags():
    p = _parser()
    apply_config_defaults(p, {"delta": "0.25", "delta_sweep": "0.1,0.2", "verbose": "on"})
    args = p.parse_args([])
    assert (args.delta, args.delta_sweep, args.verbose) == (0.25, (0.1, 0.2), True)
    args = p.parse_args(["--delta", "0.4"])
    assert args.delta == 0.4


def test_config_rejects_unknown_keys_and_bad_bools():
    with pytest.raises(InputError, match="unknown config keys: gamma"):
        apply_config_defaults(_parser(), {"gamma": "5"})
    with pytest.raises(InputError, match="expects a boolean"):
        apply_config_defaults(_parser(), {"verbose": "maybe"})


def test_list_parsers():
    assert parse_float_list("0.05, 0.1,") == (0.05, 0.1)
    assert parse_int_list("1,4,9") == (1, 4, 9)
    with pytest.raises(argparse.ArgumentTypeError):
        parse_int_list("1,x")


def test_run_config_from_namespace():
    args = argparse.Namespace(
        delta=0.3, k=None, threshold=0.6, lr=0.05, steps=10, optimizer="gd", tau=0.1,
        gamma=None, stride=16, points_per_cell=9, layout="center", strategy="nearest-gt",
        verbose=False, gt="in/gt.jsonl", out_csv=None,
    )
    run = RunConfig.from_namespace(args)
    assert run.nap.delta == 0.3 and run.nap.k == 3
    assert run.nap.count_threshold == 0.6 and run.train.count_threshold == 0.6
    assert run.train.learning_rate == 0.05 and run.train.optimizer is Optimizer.GRADIENT_DESCENT
    assert run.match.tau == 0.1 and run.loss.tau == 0.1
    assert run.decode.gamma == 100.0
    assert run.layout is LayoutKind.CENTER and run.strategy is Strategy.NEAREST_GT
    assert run.paths == {"gt": "in/gt.jsonl"}
    spec = run.grid_for((64.0, 48.0))
    assert (spec.height, spec.width, spec.stride, spec.points_per_cell) == (3, 4, 16, 9)


def test_run_config_defaults_and_validation():
    run = RunConfig.from_namespace(argparse.Namespace())
    assert run.nap.delta == 0.5
    assert run.train.steps == 500
    assert run.as_dict()["loss"]["lambda2"] == 2e-4
    with pytest.raises(InputError):
        RunConfig.from_namespace(argparse.Namespace(delta=-1.0))


def test_config_rejects_values_outside_choices():
    p = argparse.ArgumentParser()
    p.add_argument("--strategy", choices=["one2one", "nearest-gt"], default="one2one")
    with pytest.raises(InputError, match="config key 'strategy' must be one of one2one, nearest-gt"):
        apply_config_defaults(p, {"strategy": "bogus"})
    apply_config_defaults(p, {"strategy": "nearest-gt"})
    assert p.parse_args([]).strategy == "nearest-gt"
