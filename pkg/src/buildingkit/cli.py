"""Command-line surface.

Subcommands mirror the pipeline stages (mosaic, polygonize, fuse, lod1,
eval, analyze, pipeline). Exit codes: 0 success, 1 validation failure,
2 I/O failure, 64 usage errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import FileFormatError, MissingInput, UndefinedResult
from .io.config import default_threads, load_config

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _add_common(p: _Parser, config_required=True):
    p.add_argument("--config", required=config_required, help="pipeline config file")
    p.add_argument("--tile", help="restrict to one tile, as ix,iy or ix_iy")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: GBA_THREADS or 1)")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for randomized helpers (pipeline itself is deterministic)")


def build_parser() -> _Parser:
    parser = _Parser(prog="buildingkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, description in [
        ("mosaic", "composite scenes by usability priority"),
        ("polygonize", "probability raster to footprint features"),
        ("fuse", "quality-guided multi-source fusion"),
        ("lod1", "height assignment and prism models"),
        ("pipeline", "run every configured stage"),
    ]:
        p = sub.add_parser(name, help=description)
        _add_common(p)

    p = sub.add_parser("eval", help="evaluate a product against a reference")
    p.add_argument("--pred", required=True, help="prediction feature file")
    p.add_argument("--gt", required=True, help="reference feature file")
    p.add_argument("--cell-m", type=float, default=10.0, help="volume aggregation cell")
    p.add_argument("--city", default="city", help="label for the report row")
    p.add_argument("--product", default="pred", help="label for the report row")
    _add_common(p, config_required=False)

    p = sub.add_parser("analyze", help="statistical analyses")
    asub = p.add_subparsers(dest="analysis", required=True)

    g = asub.add_parser("global-count", help="continental count extrapolation")
    g.add_argument("--counts", required=True, help="CSV: continent,count")
    g.add_argument("--ratios", required=True,
                   help="CSV: continent,ratio (optional GLOBAL row = average)")
    g.add_argument("--global-avg", type=float, default=None,
                   help="override the global average ratio")
    _add_common(g, config_required=False)

    r = asub.add_parser("regression", help="log-log regression of two columns")
    r.add_argument("--table", required=True, help="CSV input")
    r.add_argument("--x-col", required=True)
    r.add_argument("--y-col", required=True)
    r.add_argument("--key-col", default="region_id")
    _add_common(r, config_required=False)

    k = asub.add_parser("ranking", help="ranking agreement of two indicators")
    k.add_argument("--table", required=True,
                   help="CSV with region_id and three value columns")
    k.add_argument("--indicator-a", required=True)
    k.add_argument("--indicator-b", required=True)
    k.add_argument("--reference", required=True)
    k.add_argument("--key-col", default="region_id")
    _add_common(k, config_required=False)

    c = asub.add_parser("per-capita", help="per-capita indicator table")
    c.add_argument("--regions", required=True,
                   help="CSV: region_id,building_count,area_m2,volume_m3,population")
    _add_common(c, config_required=False)
    return parser


def _threads_of(args) -> int:
    return args.threads if args.threads is not None else default_threads()


def _cfg(args):
    cfg = load_config(args.config)
    if args.tile:
        cfg.tile = args.tile.replace(",", "_")
    return cfg


def _run_stage(args) -> int:
    from . import pipeline as pl

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = _cfg(args)
    threads = _threads_of(args)
    if args.command == "mosaic":
        grid = pl.stage_mosaic(cfg, out)
        print(f"mosaic: {'written' if grid is not None else 'no scenes configured'}")
    elif args.command == "polygonize":
        prob = pl.stage_mosaic(cfg, out) if cfg.scenes_table else None
        records = pl.stage_polygonize(cfg, out, prob)
        print(f"polygonize: {len(records)} footprints")
    elif args.command == "fuse":
        records = pl.stage_fuse(cfg, out, [], threads)
        print(f"fuse: {len(records)} fused footprints")
    elif args.command == "lod1":
        fused, _ = fio_load(cfg)
        records, completeness = pl.stage_lod1(cfg, out, fused, threads)
        print(f"lod1: {len(records)} records, completeness {completeness:.3f}")
    elif args.command == "pipeline":
        summary = pl.run_pipeline(cfg, out, threads)
        print(
            "pipeline: fused {n_fused}, lod1 {n_lod1}, completeness "
            "{height_completeness:.3f}".format(**summary)
        )
    return EXIT_OK


def fio_load(cfg):
    """Fused records for a standalone lod1 run: fused.jsonl next to config."""
    from .io import features as fio

    fused_path = cfg.base_dir / "fused.jsonl"
    if fused_path.exists():
        return fio.load_footprints(fused_path)
    raise MissingInput(
        "standalone lod1 needs fused.jsonl next to the config; run fuse first"
    )


def _run_eval(args) -> int:
    from .io import features as fio
    from .io.tables import write_eval_report
    from .metrics import EvalReport, evaluate

    pred = fio.read_lod1(args.pred)
    gt = fio.read_lod1(args.gt)
    report = evaluate(pred, gt, cell_m=args.cell_m)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_eval_report(out / "eval.csv", {(args.city, args.product): report})
    parts = [
        f"{name}={value:.6g}"
        for name, value in zip(EvalReport.columns(), report.as_row())
        if value is not None
    ]
    print(" ".join(parts))
    return EXIT_OK


def _run_analyze(args) -> int:
    import csv

    from . import analytics
    from .io import tables

    if args.analysis == "global-count":
        counts = tables.read_continental_counts(args.counts)
        ratios, global_avg = tables.read_continental_ratios(args.ratios)
        if args.global_avg is not None:
            global_avg = args.global_avg
        point, low, high = analytics.estimate_global_count(counts, ratios, global_avg)
        print(f"global-count: point={point:.2f} low={low:.2f} high={high:.2f}")
    elif args.analysis == "regression":
        xs, ys = [], []
        with open(args.table, newline="") as fh:
            for row in csv.DictReader(fh):
                xs.append(float(row[args.x_col]))
                ys.append(float(row[args.y_col]))
        res = analytics.loglog_regression(xs, ys)
        print(
            f"regression: slope={res.slope:.6g} intercept={res.intercept:.6g} "
            f"pearson_r={res.pearson_r:.6g} spearman_rho={res.spearman_rho:.6g} "
            f"n={res.n} excluded={res.n_excluded}"
        )
    elif args.analysis == "ranking":
        series = {args.indicator_a: {}, args.indicator_b: {}, args.reference: {}}
        with open(args.table, newline="") as fh:
            for row in csv.DictReader(fh):
                key = row[args.key_col]
                for col in series:
                    series[col][key] = float(row[col])
        rows, n_pairs = analytics.agreement_decomposition(
            series[args.indicator_a],
            series[args.indicator_b],
            series[args.reference],
            names=(args.indicator_a, args.indicator_b),
        )
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        tables.write_agreement_rows(out / "ranking_agreement.csv", rows, n_pairs)
        for r in rows:
            print(
                f"ranking: {r.indicator} both={r.both_correct} "
                f"only={r.only_this_correct} total={r.total_correct} "
                f"rate={100 * r.rate:.1f}% of {n_pairs} pairs"
            )
    elif args.analysis == "per-capita":
        regions = tables.read_region_stats(args.regions)
        rows, excluded = analytics.per_capita_indicators(regions)
        for region, vol_pc, area_pc in rows:
            print(f"per-capita: {region} volume={vol_pc:.6g} area={area_pc:.6g}")
        if excluded:
            print(f"per-capita: excluded (no population): {','.join(excluded)}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "eval":
            return _run_eval(args)
        if args.command == "analyze":
            return _run_analyze(args)
        return _run_stage(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except (FileFormatError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (MissingInput, UndefinedResult, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
