"""End-to-end orchestration: mosaic -> polygonize -> fuse -> lod1 -> eval.

Work is distributed over a fixed thread pool (admin units and records are
independent), and every writer sorts by id first, so outputs are
byte-identical for any worker count.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .fusion import fuse_admin
from .geometry import FootprintRecord, SOURCE_PSR_DERIVED
from .io import features as fio
from .io.config import PipelineConfig
from .io.geotiff import read_geotiff, write_geotiff
from .io.tables import (
    read_scene_table,
    write_contributions,
    write_eval_report,
    write_lod1_table,
)
from .lod1 import PredictionStack, assign_height, tta_aggregate
from .metrics import EvalReport, evaluate
from .mosaic import SceneEntry, assign_priorities, filter_scenes, mosaic
from .polygonize import (
    SimplifyParams,
    filter_false_positives,
    regularize_mask,
    simplify,
    threshold_mask,
    trace_polygons,
)
from .raster import GridSpec, RasterGrid
from .tiling import tile_of


def _pool_map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def stage_mosaic(cfg: PipelineConfig, out_dir: Path) -> Optional[RasterGrid]:
    """Filter and composite the configured scenes; None when not configured."""
    if cfg.scenes_table is None:
        return None
    rows = read_scene_table(cfg.scenes_table)
    base = cfg.scenes_table.parent
    scenes = []
    for row in rows:
        raster = read_geotiff(base / row["path"])
        mask = read_geotiff(base / row["mask_path"])
        scenes.append(
            SceneEntry(
                scene_id=row["scene_id"],
                raster=raster,
                usable_mask=mask,
                cloud_fraction=row["cloud_fraction"],
                acquisition_year=row["year"],
            )
        )
    kept = filter_scenes(
        scenes, cfg.thresholds.cloud, cfg.primary_year, cfg.fallback_year
    )
    if not kept:
        raise ValueError("no scene passes the cloud filter in either year")
    assign_priorities(kept)
    bounds = np.asarray([s.raster.bounds for s in kept])
    union = (
        float(bounds[:, 0].min()),
        float(bounds[:, 1].min()),
        float(bounds[:, 2].max()),
        float(bounds[:, 3].max()),
    )
    first = kept[0].raster
    target = GridSpec.covering(union, first.pixel_size, first.units)
    composite = mosaic(kept, target)
    write_geotiff(out_dir / "mosaic.tif", composite)
    return composite


def stage_polygonize(
    cfg: PipelineConfig, out_dir: Path, prob: Optional[RasterGrid]
) -> list[FootprintRecord]:
    """Probability raster to filtered footprint records."""
    if prob is None:
        if cfg.probability_raster is None:
            return []
        prob = read_geotiff(cfg.probability_raster)
    xmin, ymin, xmax, ymax = prob.bounds
    tile = cfg.tile or str(tile_of(0.5 * (xmin + xmax), 0.5 * (ymin + ymax)))
    mask = regularize_mask(threshold_mask(prob, cfg.thresholds.probability))
    params = SimplifyParams(
        cfg.simplify.tolerance_m,
        cfg.simplify.min_area_m2,
        cfg.simplify.min_ring_vertices,
    )
    records = []
    for i, poly in enumerate(trace_polygons(mask)):
        slim = simplify(poly, params)
        if slim is None:
            continue
        records.append(
            FootprintRecord(f"psr_{tile}_{i:05d}", slim, SOURCE_PSR_DERIVED)
        )
    if cfg.landcover_builtup is not None and records:
        landcover = read_geotiff(cfg.landcover_builtup)
        records, report = filter_false_positives(
            records, landcover, cfg.thresholds.dilation_m
        )
    fio.write_footprints(records, out_dir / "psr_derived.jsonl",
                         extra_properties={"tile": tile})
    return records


def stage_fuse(
    cfg: PipelineConfig,
    out_dir: Path,
    psr_records: Sequence[FootprintRecord],
    threads: int = 1,
) -> list[FootprintRecord]:
    """Quality-guided fusion per admin unit."""
    sources: dict[str, list[FootprintRecord]] = {}
    for source, path in sorted(cfg.sources.items()):
        sources[source], _ = fio.load_footprints(path, source)
    if psr_records:
        sources[SOURCE_PSR_DERIVED] = list(psr_records)
    if not sources:
        return []
    if cfg.admin_boundaries is not None:
        units = fio.read_admin_units(cfg.admin_boundaries)
    else:
        units = []
    if not units:
        raise ValueError("fusion requires admin boundaries")

    def fuse_one(unit):
        fused, contributions = fuse_admin(unit, sources, cfg.thresholds.overlap)
        for rec in fused:
            rec.admin_id = unit.admin_id
        return unit.admin_id, fused, contributions

    results = _pool_map(fuse_one, units, threads)
    all_fused: list[FootprintRecord] = []
    contrib_rows = {}
    for admin_id, fused, contributions in results:
        all_fused.extend(fused)
        contrib_rows[admin_id] = contributions
    all_fused.sort(key=lambda r: str(r.id))
    fio.write_footprints(all_fused, out_dir / "fused.jsonl")
    write_contributions(out_dir / "contributions.csv", contrib_rows)
    return all_fused


def stage_lod1(
    cfg: PipelineConfig,
    out_dir: Path,
    fused: Sequence[FootprintRecord],
    threads: int = 1,
):
    """Aggregate the height stack and extrude the fused footprints."""
    if not cfg.height_layers:
        return [], None
    stack = PredictionStack([read_geotiff(p) for p in cfg.height_layers])
    mean, variance = tta_aggregate(stack)
    write_geotiff(out_dir / "height_mean.tif", mean)
    write_geotiff(out_dir / "height_variance.tif", variance)

    records = _pool_map(
        lambda rec: assign_height(rec, mean, variance), fused, threads
    )
    min_h = cfg.thresholds.min_height
    n_valid = 0
    for rec in records:
        rec.height_valid = rec.height_m is not None and rec.height_m >= min_h
        n_valid += rec.height_valid
    completeness = n_valid / len(records) if records else 0.0
    records = sorted(records, key=lambda r: str(r.id))
    fio.write_lod1(records, out_dir / "lod1.jsonl")
    write_lod1_table(out_dir / "lod1_table.csv", records)
    return records, completeness


def stage_eval(cfg: PipelineConfig, out_dir: Path, lod1_records) -> Optional[EvalReport]:
    if cfg.ground_truth is None or not lod1_records:
        return None
    gt = fio.read_lod1(cfg.ground_truth)
    report = evaluate(lod1_records, gt, cell_m=cfg.volume_cell_m,
                      min_height_m=cfg.thresholds.min_height)
    city = cfg.tile or "city"
    write_eval_report(out_dir / "eval.csv", {(city, "fused_lod1"): report})
    return report


def run_pipeline(
    cfg: PipelineConfig, out_dir, threads: int = 1
) -> dict:
    """All stages on one configuration; returns a JSON-ready summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prob = stage_mosaic(cfg, out)
    psr = stage_polygonize(cfg, out, prob)
    fused = stage_fuse(cfg, out, psr, threads)
    lod1_records, completeness = stage_lod1(cfg, out, fused, threads)
    report = stage_eval(cfg, out, lod1_records)
    summary = {
        "n_psr_derived": len(psr),
        "n_fused": len(fused),
        "n_lod1": len(lod1_records),
        "height_completeness": completeness,
        "eval": None if report is None else dict(zip(EvalReport.columns(), report.as_row())),
    }
    (out / "pipeline_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    return summary
