"""Command-line entry points for rendering, segmenting, and running suites."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bench import ExperimentConfig, aggregate_rows, read_rows_csv, run_suite
from .density import DotScene, downsample_sum, render_density, upsample_labels
from .gridio import load_dgrid, save_dgrid, save_lmap, save_region_table
from .segmentation import SegmentationConfig, segment, segmentation_from_labels


def _cmd_render(args) -> int:
    scene = DotScene.load(args.scene)
    grid = render_density(scene)
    save_dgrid(args.out, grid)
    print(f"rendered {len(scene.dots)} dots -> {args.out} (total mass {grid.sum():.3f})")
    return 0


def _seg_config(args) -> SegmentationConfig:
    overrides = {}
    if args.config:
        overrides = json.loads(Path(args.config).read_text())
    return SegmentationConfig(**overrides)


def _cmd_segment(args) -> int:
    grid = load_dgrid(getattr(args, "in"))
    config = _seg_config(args)
    factor = 1 if args.no_downsample else config.downsample_factor
    working = grid if factor == 1 else downsample_sum(grid, factor)
    seg = segment(working, config, seed=args.seed)
    if factor == 1:
        full = seg
    else:
        labels = upsample_labels(seg.labels, factor, grid.shape[0], grid.shape[1])
        kinds = [r.kind for r in sorted(seg.regions, key=lambda r: r.id)]
        full = segmentation_from_labels(labels, grid, kinds)
    save_lmap(args.out, full.labels)
    sidecar = Path(args.out).with_suffix(".regions.json")
    save_region_table(sidecar, full.regions)
    print(f"{full.n_regions} regions -> {args.out} (+ {sidecar.name})")
    return 0


def _cmd_run(args) -> int:
    config = ExperimentConfig.from_json(Path(args.config).read_text())
    if args.seed is not None:
        config = ExperimentConfig.from_json(
            json.dumps({**json.loads(config.to_json()), "seeds": [args.seed]})
        )
    out_dir = args.out or "bench_out"
    report = run_suite(config, out_dir=out_dir)
    print(f"wrote {out_dir}/results.csv and report.json ({report['wall_s']:.1f}s)")
    _print_iterations(report["iterations"])
    return 0


def _print_iterations(iterations) -> None:
    print(f"{'iter':>4}  {'MAE':>8}  {'RMSE':>8}  {'MAE se':>8}")
    for it in iterations:
        print(
            f"{it['iteration']:>4}  {it['mae']:>8.3f}  {it['rmse']:>8.3f}  {it['mae_se']:>8.3f}"
        )


def _cmd_report(args) -> int:
    rows = read_rows_csv(getattr(args, "in"))
    n_iter = max(r["iteration"] for r in rows)
    _print_iterations(aggregate_rows(rows, n_iter))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description="Interactive counting bench")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment suite from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None, help="output directory (default bench_out)")
    p_run.add_argument("--seed", type=int, default=None, help="replace the seed list")
    p_run.set_defaults(func=_cmd_run)

    p_seg = sub.add_parser("segment", help="segment a density grid into regions")
    p_seg.add_argument("--in", required=True, help="input .dgrid density map")
    p_seg.add_argument("--out", required=True, help="output .lmap label map")
    p_seg.add_argument("--config", default=None, help="JSON overrides for the segmenter")
    p_seg.add_argument("--seed", type=int, default=0)
    p_seg.add_argument(
        "--no-downsample",
        action="store_true",
        help="treat the input as already at working resolution",
    )
    p_seg.set_defaults(func=_cmd_segment)

    p_render = sub.add_parser("render", help="render a dot-scene JSON to a density grid")
    p_render.add_argument("--scene", required=True)
    p_render.add_argument("--out", required=True)
    p_render.set_defaults(func=_cmd_render)

    p_report = sub.add_parser("report", help="aggregate a results CSV")
    p_report.add_argument("--in", required=True)
    p_report.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
