"""
Command-line entry point.

Run from repo root:
    python -m src.cli gen --kind clusters --scenes 20 --out out/gt.jsonl --pred-out out/pred.jsonl --jitter 1.5
    python -m src.cli eval --gt out/gt.jsonl --pred out/pred.jsonl --out-csv out/ap.csv
    python -m src.cli match-demo --strategy nearest-gt --scenes 20 --out-csv out/history.csv
    python -m src.cli train-demo --points-out out/points.jsonl --svg out/scatter.svg
    python -m src.cli sweep --ks 1,4,9 --layouts center,grid --out-csv out/k_sweep.csv

Exit codes: 0 success, 1 internal error, 2 bad input.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Callable, Sequence

from src.config import RunConfig, apply_config_defaults, load_config_file, parse_float_list, parse_int_list
from src.core import InputError, Scene, nn_distance_quantile
from src.formats import (
    ap_table,
    attach_predictions,
    counts_table,
    history_table,
    meta_path_for,
    pr_table,
    read_gt_jsonl,
    read_pred_jsonl,
    save_pr_svg,
    save_scatter_svg,
    sweep_table,
    write_csv,
    write_gt_jsonl,
    write_meta,
    write_pred_jsonl,
)
from src.metrics import localization_prf, mae_mse, nap_evaluate
from src.proposal import LayoutKind, decode
from src.synth import SceneKind, SceneRecipe, augment, corrupt, generate
from src.trainer import FitResult, Optimizer, Strategy, fit_scene

# Corruption and augmentation draw from streams offset from the scene seed.
CORRUPT_SEED_OFFSET = 0x5EED
AUGMENT_SEED_OFFSET = 0xA06


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _required(args: argparse.Namespace, name: str) -> Path:
    value = getattr(args, name, None)
    if not value:
        raise InputError(f"--{name.replace('_', '-')} is required (flag or config key)")
    return Path(value)


def _recipes(args: argparse.Namespace) -> list[SceneRecipe]:
    if args.scenes < 1:
        raise InputError(f"--scenes must be >= 1, got {args.scenes}")
    return [
        SceneRecipe(
            kind=args.kind,
            n_points=args.n_points,
            image_size=(args.width, args.height),
            cluster_count=args.cluster_count,
            spread=args.spread,
            seed=args.seed + i,
        )
        for i in range(args.scenes)
    ]


def _fit(
    scenes: Sequence[Scene], run: RunConfig, image_size: tuple[float, float], strategy: Strategy
) -> list[FitResult]:
    spec = run.grid_for(image_size)
    print(
        f"[train] {len(scenes)} scene(s), strategy={strategy.value} grid={spec.height}x{spec.width} "
        f"K={spec.points_per_cell} layout={run.layout.value} M={spec.total_proposals} "
        f"steps={run.train.steps} optimizer={run.train.optimizer.value}",
        flush=True,
    )
    return [
        fit_scene(scene, spec, run.train, run.loss, strategy, run.layout, run.decode)
        for scene in scenes
    ]


def _history_rows(scenes: Sequence[Scene], fits: Sequence[FitResult], strategy: Strategy) -> list[dict]:
    return [
        {"scene_id": scene.id, "strategy": strategy.value, **rec.as_row()}
        for scene, fit in zip(scenes, fits)
        for rec in fit.history
    ]


def _decoded(scenes: Sequence[Scene], fits: Sequence[FitResult], run: RunConfig) -> list[Scene]:
    return [s.with_predictions(decode(f.model, run.decode)) for s, f in zip(scenes, fits)]


def _print_eval(tag: str, scenes: Sequence[Scene], run: RunConfig) -> dict[str, float]:
    report = nap_evaluate(scenes, run.nap)
    mae, mse = mae_mse(
        [c for _, _, c in report.per_scene_counts], [n for _, n, _ in report.per_scene_counts]
    )
    print(f"[{tag}] nAP={report.nap_mean:.6g} MAE={mae:.6g} MSE={mse:.6g}", flush=True)
    return {"nap": report.nap_mean, "mae": mae, "mse": mse}


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args: argparse.Namespace) -> int:
    out = _required(args, "out")
    recipes = _recipes(args)
    scenes = [generate(r) for r in recipes]
    image_size = (args.width, args.height)
    if args.augment:
        augmented = [
            augment(s, image_size, seed=r.seed + AUGMENT_SEED_OFFSET, crop=args.crop)
            for s, r in zip(scenes, recipes)
        ]
        scenes = [s for s, _ in augmented]
        print(f"[gen] augmented {len(scenes)} scene(s) to {args.crop:g}px crops", flush=True)

    write_gt_jsonl(scenes, out)
    print(f"[gen] wrote {out} ({len(scenes)} scenes, {sum(s.n for s in scenes)} points)", flush=True)

    outputs = {"gt": str(out)}
    if args.pred_out:
        pred_out = Path(args.pred_out)
        predicted = [
            corrupt(
                s,
                jitter_sigma=args.jitter,
                drop_rate=args.drop_rate,
                dup_rate=args.dup_rate,
                seed=r.seed + CORRUPT_SEED_OFFSET,
                conf_noise=args.conf_noise,
            )
            for s, r in zip(scenes, recipes)
        ]
        write_pred_jsonl(predicted, pred_out)
        print(
            f"[gen] wrote {pred_out} ({len(predicted)} scenes, {sum(s.m for s in predicted)} predictions)",
            flush=True,
        )
        outputs["pred"] = str(pred_out)

    meta = write_meta(
        meta_path_for(out),
        {
            "recipe": {k: v for k, v in vars(args).items() if k != "func"},
            "outputs": outputs,
            "scenes": len(scenes),
            "points": sum(s.n for s in scenes),
            "nn_distance_px": {f"p{int(q * 100):02d}": nn_distance_quantile(scenes, q) for q in (0.05, 0.5, 0.95)},
        },
    )
    print(f"[meta] {meta} written", flush=True)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    run = RunConfig.from_namespace(args)
    gt_path, pred_path = _required(args, "gt"), _required(args, "pred")
    scenes = attach_predictions(read_gt_jsonl(gt_path), read_pred_jsonl(pred_path))
    if not scenes:
        raise InputError(f"{gt_path}: no scenes")
    print(
        f"[eval] scenes={len(scenes)} gt_points={sum(s.n for s in scenes)} "
        f"predictions={sum(s.m for s in scenes)} association={run.nap.association}",
        flush=True,
    )

    report = nap_evaluate(scenes, run.nap)
    for delta, ap in sorted(report.ap_per_delta.items()):
        print(f"[eval] delta={delta:g} ap={ap:.6g}", flush=True)
    print(f"[eval] nAP={report.nap_mean:.6g}", flush=True)

    mae, mse = mae_mse(
        [c for _, _, c in report.per_scene_counts], [n for _, n, _ in report.per_scene_counts]
    )
    print(f"[eval] MAE={mae:.6g} MSE={mse:.6g}", flush=True)
    precision, recall, f1 = localization_prf(scenes, run.nap, run.nap.count_threshold)
    print(f"[eval] P={precision:.6g} R={recall:.6g} F1={f1:.6g}", flush=True)

    tables = (
        (args.out_csv, ap_table),
        (args.pr_csv, pr_table),
        (args.counts_csv, counts_table),
    )
    for path, build in tables:
        if path:
            rows = write_csv(build(report), path)
            print(f"[out] {path}: {rows} rows", flush=True)
    if args.pr_svg:
        save_pr_svg(report, args.pr_svg)
        print(f"[out] {args.pr_svg} written", flush=True)
    return 0


def cmd_match_demo(args: argparse.Namespace) -> int:
    run = RunConfig.from_namespace(args)
    scenes = [generate(r) for r in _recipes(args)]
    fits = _fit(scenes, run, (args.width, args.height), run.strategy)

    under = exact = over = 0
    for scene, fit in zip(scenes, fits):
        last = fit.history[-1]
        exact += last.count == scene.n
        under += last.count < scene.n
        over += last.count > scene.n
        print(
            f"[match-demo] {scene.id} {run.strategy.value}: count={last.count} "
            f"positives={last.positives} distinct_gt={last.distinct_gt} (N={scene.n})",
            flush=True,
        )
    print(
        f"[match-demo] {run.strategy.value}: exact={exact}/{len(scenes)} "
        f"under={under} over={over}",
        flush=True,
    )

    if args.out_csv:
        rows = write_csv(history_table(_history_rows(scenes, fits, run.strategy)), args.out_csv)
        print(f"[out] {args.out_csv}: {rows} rows", flush=True)
    return 0


def cmd_train_demo(args: argparse.Namespace) -> int:
    run = RunConfig.from_namespace(args)
    image_size = (args.width, args.height)
    scenes = [generate(r) for r in _recipes(args)]
    fits = _fit(scenes, run, image_size, run.strategy)
    decoded = _decoded(scenes, fits, run)
    summary = _print_eval("train-demo", decoded, run)

    if args.out_csv:
        rows = write_csv(history_table(_history_rows(scenes, fits, run.strategy)), args.out_csv)
        print(f"[out] {args.out_csv}: {rows} rows", flush=True)
    if args.points_out:
        write_pred_jsonl(decoded, args.points_out)
        print(
            f"[out] {args.points_out}: {len(decoded)} scenes, {sum(s.m for s in decoded)} proposals",
            flush=True,
        )
    if args.gt_out:
        write_gt_jsonl(scenes, args.gt_out)
        print(f"[out] {args.gt_out}: {len(scenes)} scenes", flush=True)
    if args.svg:
        svg = Path(args.svg)
        for scene in decoded:
            path = svg if len(decoded) == 1 else svg.with_name(f"{svg.stem}_{scene.id}{svg.suffix}")
            save_scatter_svg(scene, path, image_size, run.train.count_threshold)
            print(f"[out] {path} written", flush=True)

    anchor = args.out_csv or args.points_out
    if anchor:
        meta = write_meta(
            meta_path_for(anchor),
            {
                "config": run.as_dict(),
                "scenes": [
                    {"id": s.id, "n": s.n, "final_count": f.final_count,
                     "final_total": f.history[-1].loss.total}
                    for s, f in zip(scenes, fits)
                ],
                "summary": summary,
            },
        )
        print(f"[meta] {meta} written", flush=True)
    return 0


def _held_total_k(k: int, stride: int, base_stride: int) -> int:
    """Points per cell at `stride` that keep the proposal count of K=k at `base_stride`."""
    if stride % base_stride:
        raise InputError(f"--hold-total needs every stride to be a multiple of {base_stride}, got {stride}")
    return k * (stride // base_stride) ** 2


def cmd_sweep(args: argparse.Namespace) -> int:
    out = _required(args, "out_csv")
    image_size = (args.width, args.height)
    scenes = [generate(r) for r in _recipes(args)]
    rows = []
    for layout in args.layouts:
        for k in args.ks:
            for stride in args.strides:
                k_eff = _held_total_k(k, stride, args.strides[0]) if args.hold_total else k
                args.layout, args.points_per_cell, args.stride = layout, k_eff, stride
                run = RunConfig.from_namespace(args)
                fits = _fit(scenes, run, image_size, run.strategy)
                summary = _print_eval(f"sweep {layout} K={k_eff} s={stride}", _decoded(scenes, fits, run), run)
                rows.append({"layout": layout, "points_per_cell": k_eff, "stride": stride, **summary})

    written = write_csv(sweep_table(rows), out)
    print(f"[out] {out}: {written} rows", flush=True)
    meta = write_meta(
        meta_path_for(out),
        {"layouts": list(args.layouts), "points_per_cell": list(args.ks), "strides": list(args.strides),
         "hold_total": bool(args.hold_total), "scenes": len(scenes), "rows": rows},
    )
    print(f"[meta] {meta} written", flush=True)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _layout_list(text: str) -> tuple[str, ...]:
    try:
        return tuple(LayoutKind(v.strip()).value for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"layouts must be among center,grid; got {text!r}") from exc


def _add_recipe_args(p: argparse.ArgumentParser, kind: str = SceneKind.UNIFORM.value) -> None:
    g = p.add_argument_group("scene recipe")
    g.add_argument("--kind", choices=[k.value for k in SceneKind], default=kind)
    g.add_argument("--n-points", type=int, default=30)
    g.add_argument("--width", type=float, default=128.0)
    g.add_argument("--height", type=float, default=128.0)
    g.add_argument("--cluster-count", type=int, default=3)
    g.add_argument("--spread", type=float, default=4.0, help="cluster std-dev in px")
    g.add_argument("--seed", type=int, default=0, help="scene i uses seed + i")
    g.add_argument("--scenes", type=int, default=1)


def _add_eval_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("evaluation")
    g.add_argument("--delta", type=float, help="primary delta (default 0.5)")
    g.add_argument("--delta-sweep", type=parse_float_list, help="comma list (default 0.05..0.50)")
    g.add_argument("--k", type=int, help="kNN neighbours (default 3)")
    g.add_argument("--fallback-radius", type=float, help="d_knn for a lone GT point (default 32)")
    g.add_argument("--threshold", type=float, help="counting threshold (default 0.5)")


def _add_model_args(p: argparse.ArgumentParser, grid: bool = True) -> None:
    g = p.add_argument_group("model and optimizer")
    if grid:
        g.add_argument("--stride", type=int, default=8)
        g.add_argument("--points-per-cell", type=int, default=4)
        g.add_argument("--layout", choices=[k.value for k in LayoutKind], default=LayoutKind.GRID.value)
    g.add_argument("--strategy", choices=[s.value for s in Strategy], default=Strategy.ONE_TO_ONE.value)
    g.add_argument("--gamma", type=float, help="offset scale (default 100)")
    g.add_argument("--tau", type=float, help="matching distance weight (default 0.05)")
    g.add_argument("--lambda1", type=float, help="negative-class weight (default 0.5)")
    g.add_argument("--lambda2", type=float, help="localization weight (default 2e-4)")
    g.add_argument("--steps", type=int, help="optimizer steps per scene (default 500)")
    g.add_argument("--lr", type=float, help="learning rate (default 1e-2)")
    g.add_argument("--optimizer", choices=[o.value for o in Optimizer])
    g.add_argument("--init-noise", type=float, help="initial offset jitter in px (default 0)")
    g.add_argument("--neg-threshold", type=float, help="nearest-gt radius in px (default 1.5 * stride)")
    g.add_argument("--log-every", type=int)
    g.add_argument("--verbose", action="store_true")


def build_parser() -> tuple[argparse.ArgumentParser, argparse._SubParsersAction]:
    parser = argparse.ArgumentParser(prog="python -m src.cli", description=__doc__.split("\n\n")[0].strip())
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, func: Callable[[argparse.Namespace], int], help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key=value file; flags override it")
        p.set_defaults(func=func)
        return p

    p = command("gen", cmd_gen, "generate seeded GT (and corrupted prediction) JSONL")
    _add_recipe_args(p)
    p.add_argument("--out", help="ground-truth JSONL path")
    p.add_argument("--pred-out", help="also write corrupted predictions here")
    p.add_argument("--jitter", type=float, default=0.0, help="prediction jitter std-dev in px")
    p.add_argument("--drop-rate", type=float, default=0.0)
    p.add_argument("--dup-rate", type=float, default=0.0)
    p.add_argument("--conf-noise", type=float, default=0.0)
    p.add_argument("--augment", action="store_true", help="random rescale, crop and flip")
    p.add_argument("--crop", type=float, default=128.0)

    p = command("eval", cmd_eval, "nAP, MAE/MSE and P/R/F1 of a prediction file")
    p.add_argument("--gt")
    p.add_argument("--pred")
    _add_eval_args(p)
    p.add_argument("--association", choices=["sequential", "greedy"])
    p.add_argument("--workers", type=int, help="threads for per-scene association")
    p.add_argument("--out-csv", help="AP table (delta,ap)")
    p.add_argument("--pr-csv", help="PR points (delta,recall,precision)")
    p.add_argument("--counts-csv", help="per-scene counts (scene_id,gt_count,pred_count)")
    p.add_argument("--pr-svg", help="PR curves plot")

    p = command("match-demo", cmd_match_demo, "count bias of each target-assignment strategy")
    _add_recipe_args(p, kind=SceneKind.CLUSTERS.value)
    _add_model_args(p)
    _add_eval_args(p)
    p.add_argument("--out-csv", help="per-step history CSV")

    p = command("train-demo", cmd_train_demo, "fit proposals to seeded scenes and decode them")
    _add_recipe_args(p, kind=SceneKind.CLUSTERS.value)
    _add_model_args(p)
    _add_eval_args(p)
    p.add_argument("--out-csv", help="per-step history CSV")
    p.add_argument("--points-out", help="final decoded proposals as predictions JSONL")
    p.add_argument("--gt-out", help="the generated ground truth JSONL")
    p.add_argument("--svg", help="scatter plot (GT green, predictions red)")

    p = command("sweep", cmd_sweep, "points-per-cell / layout / stride sensitivity")
    _add_recipe_args(p, kind=SceneKind.CLUSTERS.value)
    _add_model_args(p, grid=False)
    _add_eval_args(p)
    p.add_argument("--ks", type=parse_int_list, default=(1, 4, 9))
    p.add_argument("--layouts", type=_layout_list, default=("center", "grid"))
    p.add_argument("--strides", type=parse_int_list, default=(8,),
                   help="proposal count M changes with the stride unless --hold-total is set")
    p.add_argument("--hold-total", action="store_true",
                   help="scale K by (s / first stride)^2 so M stays fixed across strides")
    p.add_argument("--out-csv", help="sweep table (layout,points_per_cell,stride,mae,mse,nap)")
    return parser, sub


def main(argv: Sequence[str] | None = None) -> int:
    parser, sub = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:
            apply_config_defaults(sub.choices[args.command], load_config_file(args.config))
            args = parser.parse_args(argv)
        return args.func(args)
    except InputError as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
