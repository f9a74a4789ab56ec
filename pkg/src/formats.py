"""
File contracts: JSONL scenes, CSV tables and SVG plots.

ground truth:  {"id": "<string>", "points": [[x, y], ...]}
predictions:   {"id": "<string>", "points": [[x, y, confidence], ...]}

CSV tables go through pandas with a header row, LF line endings and floats
printed with 6 significant digits.
"""

from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from src.core import InputError, Point, Prediction, Scene  # noqa: E402
from src.metrics import NapReport  # noqa: E402

CSV_FLOAT_FORMAT = "%.6g"

AP_COLUMNS = ["delta", "ap"]
PR_COLUMNS = ["delta", "recall", "precision"]
COUNT_COLUMNS = ["scene_id", "gt_count", "pred_count"]
HISTORY_COLUMNS = [
    "scene_id", "strategy", "step", "l_cls", "l_loc", "total", "count", "positives", "distinct_gt",
]
SWEEP_COLUMNS = ["layout", "points_per_cell", "stride", "mae", "mse", "nap"]

GT_COLOR = "tab:green"
PRED_COLOR = "tab:red"


# ---------------------------------------------------------------------------
# JSONL
# ---------------------------------------------------------------------------

def _require(path: Path) -> None:
    if not path.exists():
        raise InputError(f"Missing required file: {path}")


def _records(path: Path) -> Iterable[tuple[int, dict[str, Any]]]:
    _require(path)
    with path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict) or not isinstance(obj.get("id"), str) or not isinstance(
                obj.get("points"), list
            ):
                raise InputError(f'{path}:{lineno}: expected {{"id": str, "points": [...]}}')
            yield lineno, obj


def _coords(path: Path, lineno: int, row: Any, width: int) -> list[float]:
    if (
        not isinstance(row, list)
        or len(row) != width
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in row)
    ):
        raise InputError(f"{path}:{lineno}: each point must be a list of {width} numbers, got {row!r}")
    return [float(v) for v in row]


def read_gt_jsonl(path: Path | str) -> list[Scene]:
    path = Path(path)
    scenes: list[Scene] = []
    seen: set[str] = set()
    for lineno, obj in _records(path):
        if obj["id"] in seen:
            raise InputError(f"{path}:{lineno}: duplicate scene id {obj['id']!r}")
        seen.add(obj["id"])
        rows = [_coords(path, lineno, row, 2) for row in obj["points"]]
        try:
            points = tuple(Point(x, y) for x, y in rows)
        except InputError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from exc
        scenes.append(Scene(obj["id"], points))
    return scenes


def read_pred_jsonl(path: Path | str) -> dict[str, tuple[Prediction, ...]]:
    path = Path(path)
    out: dict[str, tuple[Prediction, ...]] = {}
    for lineno, obj in _records(path):
        if obj["id"] in out:
            raise InputError(f"{path}:{lineno}: duplicate scene id {obj['id']!r}")
        preds = []
        for row in obj["points"]:
            x, y, c = _coords(path, lineno, row, 3)
            try:
                preds.append(Prediction(Point(x, y), c))
            except InputError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
        out[obj["id"]] = tuple(preds)
    return out


def attach_predictions(scenes: Sequence[Scene], predictions: dict[str, tuple[Prediction, ...]]) -> list[Scene]:
    """Join by id; GT without a prediction line gets zero predictions."""
    known = {s.id for s in scenes}
    unknown = sorted(set(predictions) - known)
    if unknown:
        raise InputError(f"prediction ids not present in ground truth: {', '.join(unknown[:5])}")
    return [s.with_predictions(predictions.get(s.id, ())) for s in scenes]


def write_gt_jsonl(scenes: Sequence[Scene], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for s in scenes:
            f.write(json.dumps({"id": s.id, "points": [[p.x, p.y] for p in s.ground_truth]}) + "\n")


def write_pred_jsonl(scenes: Sequence[Scene], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for s in scenes:
            rows = [[p.point.x, p.point.y, p.confidence] for p in s.predictions or ()]
            f.write(json.dumps({"id": s.id, "points": rows}) + "\n")


def write_meta(path: Path | str, payload: dict[str, Any]) -> Path:
    """Sidecar with a UTC timestamp; never part of the deterministic outputs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"generated_at_utc": datetime.now(timezone.utc).isoformat(), **payload}
    path.write_text(json.dumps(meta, indent=2, default=str), encoding="utf-8")
    return path


def meta_path_for(out: Path | str) -> Path:
    out = Path(out)
    return out.with_name(f"{out.stem}_meta.json")


# ---------------------------------------------------------------------------
# CSV tables
# ---------------------------------------------------------------------------

def write_csv(frame: pd.DataFrame, path: Path | str) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return len(frame)


def ap_table(report: NapReport) -> pd.DataFrame:
    rows = [{"delta": d, "ap": ap} for d, ap in sorted(report.ap_per_delta.items())]
    return pd.DataFrame(rows, columns=AP_COLUMNS)


def pr_table(report: NapReport) -> pd.DataFrame:
    rows = [
        {"delta": d, "recall": r, "precision": p}
        for d, curve in sorted(report.curves.items())
        for r, p in curve.points
    ]
    return pd.DataFrame(rows, columns=PR_COLUMNS)


def counts_table(report: NapReport) -> pd.DataFrame:
    return pd.DataFrame(list(report.per_scene_counts), columns=COUNT_COLUMNS)


def history_table(rows: Sequence[dict[str, Any]]) -> pd.DataFrame:
    return pd.DataFrame(list(rows), columns=HISTORY_COLUMNS)


def sweep_table(rows: Sequence[dict[str, Any]]) -> pd.DataFrame:
    return pd.DataFrame(list(rows), columns=SWEEP_COLUMNS)


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------

def _save_svg(fig: plt.Figure, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    plt.rcParams["svg.hashsalt"] = "points"
    plt.rcParams["svg.fonttype"] = "none"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def save_scatter_svg(
    scene: Scene, path: Path | str, image_size: tuple[float, float], threshold: float = 0.5
) -> None:
    """GT in green, predictions above threshold in red, image y axis pointing down."""
    path = Path(path)
    w, h = image_size
    fig, ax = plt.subplots(figsize=(5, 5 * h / w if w else 5))
    if scene.ground_truth:
        ax.scatter(
            [p.x for p in scene.ground_truth], [p.y for p in scene.ground_truth],
            s=18, c=GT_COLOR, marker="o", label=f"ground truth ({scene.n})",
        )
    kept = [p for p in scene.predictions or () if p.confidence > threshold]
    if kept:
        ax.scatter(
            [p.point.x for p in kept], [p.point.y for p in kept],
            s=18, c=PRED_COLOR, marker="+", label=f"predictions ({len(kept)})",
        )
    ax.set_xlim(0, w)
    ax.set_ylim(h, 0)
    ax.set_aspect("equal")
    ax.set_title(scene.id)
    ax.legend(loc="upper right", fontsize="small")
    _save_svg(fig, path)


def save_pr_svg(report: NapReport, path: Path | str) -> None:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 5))
    for delta, curve in sorted(report.curves.items()):
        if not curve.points:
            continue
        recall, precision = zip(*curve.points)
        ax.plot(recall, precision, label=f"delta={delta:g} AP={report.ap_per_delta[delta]:.3f}")
    ax.set_xlim(0, 1.0)
    ax.set_ylim(0, 1.05)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_title(f"nAP={report.nap_mean:.4f}")
    ax.legend(loc="lower left", fontsize="x-small")
    _save_svg(fig, path)
