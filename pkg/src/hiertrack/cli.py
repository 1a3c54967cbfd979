"""Command-line entry point: generate, train, track, eval, analyze.

Every command exits 0 on success and nonzero with a single-line
machine-parsable `error[kind]: message` diagnostic on failure. Outputs are
byte-reproducible for identical inputs, seeds, and configuration.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import __version__
from .config import RunConfig, default_config_text, parse_config
from .core import HiertrackError
from .dataio import (
    load_dataset,
    load_checkpoint,
    read_track_csv,
    save_checkpoint,
    write_detections_csv,
    write_embeddings,
    write_track_csv,
)
from .metrics import idf1, oracle_upper_bound
from .mpn import init_params
from .report import (
    eval_report_lines,
    plot_analysis,
    plot_training,
    write_eval_csv,
    write_stats_csv,
)
from .stitching import plan_windows, track_sequence
from .synth import generate
from .training import prepare_clips, train


def _build_parser() -> argparse.ArgumentParser:
    # shared options accepted both before and after the subcommand; SUPPRESS
    # keeps the subparser from clobbering values parsed at the top level
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS,
                        help="key=value config file")
    common.add_argument("--set", dest="overrides", action="append",
                        default=argparse.SUPPRESS, metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="worker threads for per-window inference")

    parser = argparse.ArgumentParser(
        prog="hiertrack",
        description="Hierarchical graph-based multi-object data association",
        parents=[common],
    )
    parser.add_argument("--version", action="version", version=f"hiertrack {__version__}")
    parser.add_argument(
        "--print-param-count",
        action="store_true",
        help="print the scalar parameter count for the configured model and exit",
    )

    sub = parser.add_subparsers(dest="command")

    def add_parser(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    p = add_parser("generate", help="write a synthetic scenario to a directory")
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = add_parser("train", help="train the edge classifier on labeled detections")
    p.add_argument("--data", type=Path, required=True, help="directory with detections.csv + embeddings.bin")
    p.add_argument("--out", type=Path, required=True, help="checkpoint output path")
    p.add_argument("--log", type=Path, default=None, help="training log path (default: <out>.log)")
    p.add_argument("--resume", type=Path, default=None, help="checkpoint to continue from")
    p.add_argument("--plot", action="store_true", help="also render a loss-curve figure next to the log")

    p = add_parser("track", help="track a sequence and write a trajectory CSV")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--oracle", action="store_true", help="use ground-truth labels instead of network scores")
    p.add_argument("--no-interpolate", action="store_true", help="skip gap interpolation")

    p = add_parser("eval", help="compare a trajectory CSV against ground truth")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None, help="also write the report as CSV")

    p = add_parser("analyze", help="oracle upper-bound statistics for hierarchy configurations")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument(
        "--levels",
        action="append",
        default=[],
        metavar="S1,S2,...",
        help="window sizes of one configuration (repeatable; default: configured hierarchy)",
    )
    p.add_argument("--out", type=Path, required=True, help="output directory for analysis.csv + analysis.png")

    p = add_parser("print-config", help="print every config key at its default")
    return parser


def _cmd_generate(args, config: RunConfig) -> int:
    detections, table = generate(config.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_detections_csv(out / "detections.csv", detections)
    write_embeddings(out / "embeddings.bin", table.vectors)
    labeled = [d for d in detections if d.gt_identity is not None]
    write_detections_csv(out / "gt.csv", labeled)
    print(f"wrote {len(detections)} detections, {len(labeled)} labeled, dim {table.dim} -> {out}")
    return 0


def _cmd_train(args, config: RunConfig) -> int:
    detections, table = load_dataset(args.data)
    if all(d.gt_identity is None for d in detections):
        raise HiertrackError(f"training data in {args.data} carries no identities")
    hierarchy = config.hierarchy
    start_iteration = 0
    adam = None
    if args.resume is not None:
        params, hierarchy, adam, start_iteration = load_checkpoint(args.resume)
    else:
        params = init_params(hierarchy, seed=config.train.seed)
    clips = prepare_clips(detections, table, hierarchy)

    log_path = args.log if args.log is not None else Path(str(args.out) + ".log")
    records = []
    with open(log_path, "w", encoding="utf-8") as log_file:
        adam, iteration, records = train(
            clips,
            table,
            params,
            hierarchy,
            config.train,
            log=lambda line: print(line, file=log_file, flush=True),
            adam=adam,
            start_iteration=start_iteration,
        )
    save_checkpoint(args.out, params, hierarchy, adam=adam, iteration=iteration)
    if args.plot:
        plot_training(records, log_path.with_suffix(".png"))
    if records:
        print(f"trained {len(records)} iterations, final loss {records[-1].total_loss:.6f}")
    print(f"checkpoint -> {args.out}")
    return 0


def _cmd_track(args, config: RunConfig) -> int:
    detections, table = load_dataset(args.data)
    params = None
    hierarchy = config.hierarchy
    if args.oracle:
        if all(d.gt_identity is None for d in detections):
            raise HiertrackError("oracle tracking needs labeled detections")
    else:
        if args.checkpoint is None:
            raise HiertrackError("track needs --checkpoint unless --oracle is given")
        params, hierarchy, _, _ = load_checkpoint(args.checkpoint)
    frames = [d.frame for d in detections]
    plan = plan_windows(
        min(frames), max(frames), config.window.window_length, config.window.stride
    )
    if plan.window_length > hierarchy.clip_length:
        print(
            f"note: window length {plan.window_length} exceeds the hierarchy reach "
            f"{hierarchy.clip_length}; tracks cannot span a whole window",
            file=sys.stderr,
        )
    trajectories = track_sequence(
        detections,
        table,
        hierarchy,
        params=params,
        oracle=args.oracle,
        plan=plan,
        interpolate=not args.no_interpolate,
        threads=max(1, args.threads),
    )
    write_track_csv(args.out, trajectories)
    print(f"wrote {sum(len(t.detections) for t in trajectories)} rows, "
          f"{len(trajectories)} trajectories -> {args.out}")
    return 0


def _rows_for_eval(path: Path, drop_interpolated: bool):
    rows = read_track_csv(path)
    out = []
    for frame, ident, x, y, w, h, _conf, _cls, interp in rows:
        if drop_interpolated and interp:
            continue
        out.append((frame, ident, (x, y, w, h)))
    return out


def _cmd_eval(args, config: RunConfig) -> int:
    pred = _rows_for_eval(args.pred, drop_interpolated=True)
    gt = _rows_for_eval(args.gt, drop_interpolated=False)
    report = idf1(pred, gt, sequence=Path(args.pred).name)
    for line in eval_report_lines(report):
        print(line)
    if args.out is not None:
        write_eval_csv([report], args.out)
    return 0


def _cmd_analyze(args, config: RunConfig) -> int:
    import dataclasses

    detections, table = load_dataset(args.data)
    if all(d.gt_identity is None for d in detections):
        raise HiertrackError("analysis needs labeled detections")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    level_sets = []
    for raw in args.levels:
        sizes = tuple(int(v) for v in raw.split(",") if v.strip())
        if not sizes:
            raise HiertrackError(f"bad --levels value {raw!r}")
        level_sets.append(sizes)
    if not level_sets:
        level_sets = [config.hierarchy.level_window_sizes]

    frames = [d.frame for d in detections]
    span = max(frames) - min(frames) + 1
    results = []
    for sizes in level_sets:
        if span > sizes[-1]:
            print(
                f"note: sequence spans {span} frames but the top window is {sizes[-1]}; "
                "oracle scores will measure fragmentation, not connectivity",
                file=sys.stderr,
            )
        hierarchy = dataclasses.replace(config.hierarchy, level_window_sizes=sizes)
        stats, _ = oracle_upper_bound(detections, table, hierarchy)
        label = "-".join(str(s) for s in sizes)
        results.append((label, stats))
        print(
            f"levels={label} edges={stats.total_edges} positives={stats.total_positives} "
            f"ratio={stats.positive_ratio:.4f} oracle_idf1={stats.oracle_idf1:.4f}"
        )

    write_stats_csv(results, out / "analysis.csv")
    plot_analysis(results, out / "analysis.png")
    print(f"report -> {out / 'analysis.csv'}, figure -> {out / 'analysis.png'}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    config_path = getattr(args, "config", None)
    overrides = getattr(args, "overrides", [])
    args.threads = getattr(args, "threads", os.cpu_count() or 1)
    try:
        config = parse_config(config_path, overrides)
        if args.print_param_count:
            params = init_params(config.hierarchy, seed=0)
            print(params.num_parameters())
            return 0
        if args.command is None:
            parser.print_help()
            return 2
        if args.command == "print-config":
            print(default_config_text(), end="")
            return 0
        handler = {
            "generate": _cmd_generate,
            "train": _cmd_train,
            "track": _cmd_track,
            "eval": _cmd_eval,
            "analyze": _cmd_analyze,
        }[args.command]
        return handler(args, config)
    except HiertrackError as exc:
        print(f"error[{exc.kind}]: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
