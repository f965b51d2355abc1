"""Evaluation metrics for raster and vector building products.

Instance matching is greedy one-to-one on descending overlap area. AP50/AR50
follow the score-free, single-operating-point protocol: with no detection
confidences the precision/recall pair at the full prediction set is reported
(an optional area-as-confidence sweep exists for sensitivity checks). Volume
errors are computed on rasterized height fields (1 m pixels) aggregated to
100 m^2 cells, reported in m^3 per 100 m^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional, Sequence, Union

import numpy as np
from shapely.ops import unary_union

from .errors import UndefinedResult
from .geometry import FootprintRecord, LocalEqualArea
from .index import SpatialIndex
from .lod1 import Lod1Record
from .raster import GridSpec, RasterGrid, Semantic, rasterize, resample_nearest

IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class MatchPair:
    pred_id: str
    gt_id: str
    overlap_m2: float
    iou: float


@dataclass
class MatchResult:
    pairs: list[MatchPair]
    unmatched_pred: list[str]
    unmatched_gt: list[str]


@dataclass
class EvalReport:
    """One metric bundle; absent metrics stay None."""

    iou: Optional[float] = None
    ap50: Optional[float] = None
    ar50: Optional[float] = None
    n_ratio: Optional[float] = None
    rmse_bv: Optional[float] = None
    mae_bv: Optional[float] = None
    rmse_bh: Optional[float] = None
    mae_bh: Optional[float] = None
    completeness: Optional[float] = None

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_row(self) -> list[Optional[float]]:
        return [getattr(self, name) for name in self.columns()]


def _footprints(records) -> list[FootprintRecord]:
    return [r.footprint if isinstance(r, Lod1Record) else r for r in records]


def _frame_over(records: Sequence[FootprintRecord]) -> LocalEqualArea:
    if not records:
        return LocalEqualArea(0.0, 0.0)
    arr = np.asarray([r.geometry.bounds for r in records], dtype=float)
    return LocalEqualArea(
        0.5 * float(arr[:, 0].min() + arr[:, 2].max()),
        0.5 * float(arr[:, 1].min() + arr[:, 3].max()),
    )


def raster_iou(
    pred_mask: RasterGrid,
    gt_polygons: Sequence[FootprintRecord],
    resolution_m: float = 3.0,
    frame: Optional[LocalEqualArea] = None,
) -> float:
    """Pixelwise IoU between a predicted mask and rasterized reference.

    The reference polygons are rasterized at ``resolution_m`` over the
    prediction's extent and the prediction is resampled to that grid. For
    meter-unit prediction grids, ``frame`` maps the lon/lat reference
    polygons into the grid's frame. Returns 1.0 when both are empty.
    """
    pred_mask.require_semantic(Semantic.BINARY_MASK)
    if pred_mask.units == "m":
        res = (resolution_m, resolution_m)
        transform = frame.forward if frame is not None else None
    else:
        mx, my = pred_mask.meters_per_pixel()
        dx, dy = pred_mask.pixel_size
        res = (resolution_m * dx / mx, resolution_m * dy / my)
        transform = None
    spec = GridSpec.covering(pred_mask.bounds, res, pred_mask.units)
    pred = resample_nearest(pred_mask, spec, fill=0).values == 1
    gt = rasterize(_footprints(gt_polygons), spec, transform=transform).values == 1
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def vector_iou(pred, gt, frame: Optional[LocalEqualArea] = None) -> float:
    """IoU of the unioned footprint coverage of two record sets."""
    pred = _footprints(pred)
    gt = _footprints(gt)
    if not pred and not gt:
        return 1.0
    if frame is None:
        frame = _frame_over(pred + gt)
    pu = unary_union([r.geometry.projected(frame) for r in pred])
    gu = unary_union([r.geometry.projected(frame) for r in gt])
    inter = pu.intersection(gu).area
    union = pu.area + gu.area - inter
    if union <= 0:
        return 1.0
    return float(inter / union)


def match_max_overlap(pred, gt, frame: Optional[LocalEqualArea] = None) -> MatchResult:
    """Greedy one-to-one matching on descending overlap area.

    Ties resolve lexicographically on (pred_id, gt_id); zero-overlap pairs
    never match.
    """
    pred = _footprints(pred)
    gt = _footprints(gt)
    if frame is None:
        frame = _frame_over(pred + gt)
    gt_polys = [r.geometry.projected(frame) for r in gt]
    boxes = (
        np.asarray([p.bounds for p in gt_polys], dtype=float)
        if gt_polys
        else np.empty((0, 4))
    )
    gt_index = SpatialIndex(boxes, list(range(len(gt_polys))))
    overlaps = []
    for pi, rec in enumerate(pred):
        poly = rec.geometry.projected(frame)
        for gi in gt_index.query(poly.bounds):
            inter = poly.intersection(gt_polys[gi]).area
            if inter > 0.0:
                union = poly.area + gt_polys[gi].area - inter
                overlaps.append((inter, pi, gi, inter / union if union > 0 else 0.0))
    overlaps.sort(key=lambda t: (-t[0], str(pred[t[1]].id), str(gt[t[2]].id)))
    used_pred: set[int] = set()
    used_gt: set[int] = set()
    pairs = []
    for inter, pi, gi, pair_iou in overlaps:
        if pi in used_pred or gi in used_gt:
            continue
        used_pred.add(pi)
        used_gt.add(gi)
        pairs.append(MatchPair(pred[pi].id, gt[gi].id, float(inter), float(pair_iou)))
    return MatchResult(
        pairs=pairs,
        unmatched_pred=[r.id for i, r in enumerate(pred) if i not in used_pred],
        unmatched_gt=[r.id for i, r in enumerate(gt) if i not in used_gt],
    )


def _true_positives(match: MatchResult, thresh: float) -> int:
    return sum(1 for p in match.pairs if p.iou >= thresh)


def ap50(
    pred,
    gt,
    match: Optional[MatchResult] = None,
    area_as_confidence: bool = False,
    frame: Optional[LocalEqualArea] = None,
) -> float:
    """Precision of the prediction set at IoU >= 0.5.

    Footprint products carry no confidence scores, so by default this is the
    single-point precision TP/|pred|. With ``area_as_confidence`` predictions
    are swept largest-first and the interpolated area under the
    precision-recall curve is returned instead.
    """
    pred = _footprints(pred)
    gt = _footprints(gt)
    if not pred:
        return 0.0
    if not gt:
        raise UndefinedResult("AP undefined without reference buildings")
    if match is None:
        match = match_max_overlap(pred, gt, frame)
    if not area_as_confidence:
        return _true_positives(match, IOU_THRESHOLD) / len(pred)
    from .geometry import polygon_area_m2

    tp_ids = {p.pred_id for p in match.pairs if p.iou >= IOU_THRESHOLD}
    order = sorted(pred, key=lambda r: -polygon_area_m2(r.geometry))
    hits = np.asarray([r.id in tp_ids for r in order], dtype=float)
    tp_cum = np.cumsum(hits)
    precision = tp_cum / (np.arange(len(order)) + 1)
    recall = tp_cum / len(gt)
    # envelope interpolation, integrated over recall steps
    for i in range(len(precision) - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    prev_r = 0.0
    area = 0.0
    for p, r in zip(precision, recall):
        area += p * (r - prev_r)
        prev_r = r
    return float(area)


def ar50(
    pred, gt, match: Optional[MatchResult] = None, frame: Optional[LocalEqualArea] = None
) -> float:
    """Recall of the reference set at IoU >= 0.5."""
    pred = _footprints(pred)
    gt = _footprints(gt)
    if not gt:
        raise UndefinedResult("AR undefined without reference buildings")
    if not pred:
        return 0.0
    if match is None:
        match = match_max_overlap(pred, gt, frame)
    return _true_positives(match, IOU_THRESHOLD) / len(gt)


def n_ratio(pred, gt) -> float:
    """Detected building count over reference count."""
    if len(gt) == 0:
        raise UndefinedResult("N-ratio undefined without reference buildings")
    return len(pred) / len(gt)


def _height_grid(
    records: Sequence[Lod1Record],
    spec: GridSpec,
    frame: LocalEqualArea,
) -> np.ndarray:
    present = [r for r in records if r.height_m is not None]
    burned = rasterize(
        [r.footprint for r in present],
        spec,
        values=[r.height_m for r in present],
        transform=frame.forward,
        semantic=Semantic.HEIGHT_M,
    )
    return burned.values


def volume_error(
    pred: Union[Sequence[Lod1Record], RasterGrid],
    gt: Sequence[Lod1Record],
    cell_m: float = 10.0,
    resolution_m: float = 1.0,
    built_fraction: Optional[RasterGrid] = None,
    frame: Optional[LocalEqualArea] = None,
) -> tuple[float, float]:
    """(RMSE, MAE) of per-cell volume, in m^3 per cell of cell_m^2 area.

    Both products are rasterized as height fields at ``resolution_m`` over
    the reference extent (prism height inside each footprint, zero outside;
    records without height contribute nothing, overlaps resolve by record
    order) and summed into cell_m x cell_m cells. A raster prediction is
    instead sampled per cell: volume = mean height * built fraction * cell
    area, with built fraction 1 unless provided. Errors run over every cell
    of the shared extent.
    """
    gt_fps = [r.footprint for r in gt]
    pred_is_raster = isinstance(pred, RasterGrid)
    pred_fps = [] if pred_is_raster else [r.footprint for r in pred]
    if frame is None:
        frame = _frame_over(gt_fps + pred_fps)
    boxes = [r.geometry.bounds for r in gt_fps + pred_fps]
    if not boxes:
        return (0.0, 0.0)
    arr = np.asarray(boxes, dtype=float)
    xs, ys = frame.forward(
        np.concatenate([arr[:, 0], arr[:, 2]]), np.concatenate([arr[:, 1], arr[:, 3]])
    )
    block = max(int(round(cell_m / resolution_m)), 1)
    n_cx = max(int(np.ceil((xs.max() - xs.min()) / cell_m)), 1)
    n_cy = max(int(np.ceil((ys.max() - ys.min()) / cell_m)), 1)
    spec = GridSpec(
        (float(xs.min()), float(ys.min() + n_cy * cell_m)),
        (resolution_m, resolution_m),
        n_cx * block,
        n_cy * block,
        "m",
    )

    def cells_from_records(records) -> np.ndarray:
        heights = _height_grid(records, spec, frame)
        vol = heights.reshape(n_cy, block, n_cx, block).sum(axis=(1, 3))
        return vol * resolution_m * resolution_m

    gt_cells = cells_from_records(gt)
    if pred_is_raster:
        pred.require_semantic(Semantic.HEIGHT_M)
        cell_spec = GridSpec(spec.origin, (cell_m, cell_m), n_cx, n_cy, "m")
        cx, cy = np.meshgrid(cell_spec.x_centers(), cell_spec.y_centers())
        if pred.units == "deg":
            lon, lat = frame.inverse(cx.ravel(), cy.ravel())
        else:
            lon, lat = cx.ravel(), cy.ravel()
        cols = np.floor((lon - pred.origin[0]) / pred.pixel_size[0]).astype(int)
        rows = np.floor((pred.origin[1] - lat) / pred.pixel_size[1]).astype(int)
        ok = (cols >= 0) & (cols < pred.width) & (rows >= 0) & (rows < pred.height)
        h = np.zeros(cx.size)
        h[ok] = pred.values[rows[ok], cols[ok]]
        if pred.nodata is not None:
            h[h == pred.nodata] = 0.0
        frac = np.ones(cx.size)
        if built_fraction is not None:
            frac[ok] = built_fraction.values[rows[ok], cols[ok]]
        pred_cells = (h * frac * cell_m * cell_m).reshape(n_cy, n_cx)
    else:
        pred_cells = cells_from_records(pred)
    diff = pred_cells - gt_cells
    rmse = float(np.sqrt(np.mean(diff**2)))
    mae = float(np.mean(np.abs(diff)))
    # scale to the conventional 100 m^2 reporting cell
    scale = 100.0 / (cell_m * cell_m)
    return (rmse * scale, mae * scale)


def height_error(
    pred: Sequence[Lod1Record],
    gt: Sequence[Lod1Record],
    match: Optional[MatchResult] = None,
    frame: Optional[LocalEqualArea] = None,
) -> tuple[float, float]:
    """(RMSE, MAE) in meters over matched pairs where both heights exist."""
    if match is None:
        match = match_max_overlap(pred, gt, frame)
    pred_h = {r.id: r.height_m for r in pred}
    gt_h = {r.id: r.height_m for r in gt}
    errors = [
        pred_h[p.pred_id] - gt_h[p.gt_id]
        for p in match.pairs
        if pred_h.get(p.pred_id) is not None and gt_h.get(p.gt_id) is not None
    ]
    if not errors:
        raise UndefinedResult("no matched pair carries heights on both sides")
    err = np.asarray(errors, dtype=float)
    return (float(np.sqrt(np.mean(err**2))), float(np.mean(np.abs(err))))


def completeness(
    pred: Sequence[Lod1Record],
    gt,
    min_height_m: float = 1.0,
    match: Optional[MatchResult] = None,
    frame: Optional[LocalEqualArea] = None,
) -> float:
    """Fraction of reference buildings matched by a prediction of valid height."""
    if len(gt) == 0:
        raise UndefinedResult("completeness undefined without reference buildings")
    if match is None:
        match = match_max_overlap(pred, gt, frame)
    pred_h = {r.id: r.height_m for r in pred}
    good = sum(
        1
        for p in match.pairs
        if pred_h.get(p.pred_id) is not None and pred_h[p.pred_id] >= min_height_m
    )
    return good / len(gt)


def evaluate(
    pred: Sequence[Lod1Record],
    gt: Sequence[Lod1Record],
    cell_m: float = 10.0,
    min_height_m: float = 1.0,
) -> EvalReport:
    """Full vector-product evaluation; metrics undefined for the corpus stay None."""
    frame = _frame_over(_footprints(pred) + _footprints(gt))
    match = match_max_overlap(pred, gt, frame)
    report = EvalReport()
    report.iou = vector_iou(pred, gt, frame)
    try:
        report.ap50 = ap50(pred, gt, match)
        report.ar50 = ar50(pred, gt, match)
        report.n_ratio = n_ratio(pred, gt)
        report.completeness = completeness(pred, gt, min_height_m, match)
    except UndefinedResult:
        pass
    try:
        report.rmse_bv, report.mae_bv = volume_error(pred, gt, cell_m=cell_m, frame=frame)
        report.rmse_bh, report.mae_bh = height_error(pred, gt, match)
    except UndefinedResult:
        pass
    return report
