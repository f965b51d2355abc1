"""Height attribution and prism (LoD1) model generation.

Each fused footprint receives the maximum valid height over the pixels its
footprint covers, the prediction variance at that argmax pixel as its
uncertainty, and the prism volume footprint-area * height. Heights come from
overlapping sliding-window predictions aggregated per pixel (mean) with the
spread across windows (population variance) as the per-pixel uncertainty.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import GridMismatch, InvalidGrid
from .geometry import FootprintRecord, points_in_ring, polygon_area_m2
from .raster import RasterGrid, Semantic

MIN_VALID_HEIGHT_M = 1.0
MAX_STACK_LAYERS = 4


@dataclass(eq=False)
class Lod1Record:
    """A footprint extruded to a flat-roofed prism, with uncertainty."""

    footprint: FootprintRecord
    height_m: Optional[float]
    uncertainty_m2: Optional[float]
    volume_m3: Optional[float]
    height_valid: bool = False

    @property
    def id(self) -> str:
        return self.footprint.id


@dataclass
class PredictionStack:
    """Up to four per-pixel height predictions from shifted model windows."""

    layers: Sequence[RasterGrid]

    def __post_init__(self):
        if not (1 <= len(self.layers) <= MAX_STACK_LAYERS):
            raise InvalidGrid(
                f"stack needs 1..{MAX_STACK_LAYERS} layers, got {len(self.layers)}"
            )
        first = self.layers[0]
        for layer in self.layers[1:]:
            if not first.same_geometry(layer):
                raise GridMismatch("stack layers must share grid geometry")

    def coverage_count(self) -> np.ndarray:
        return np.sum([layer.data_mask() for layer in self.layers], axis=0)


def tta_aggregate(stack: PredictionStack) -> tuple[RasterGrid, RasterGrid]:
    """Per-pixel mean and population variance over valid stack layers.

    Pixels covered by a single layer get variance 0; pixels covered by none
    are nodata in both outputs.
    """
    first = stack.layers[0]
    data = np.stack([layer.values.astype(float) for layer in stack.layers])
    valid = np.stack([layer.data_mask() for layer in stack.layers])
    count = valid.sum(axis=0)
    data = np.where(valid, data, 0.0)
    safe = np.maximum(count, 1)
    mean = data.sum(axis=0) / safe
    var = (np.where(valid, (data - mean) ** 2, 0.0)).sum(axis=0) / safe
    nodata = -9999.0
    mean = np.where(count > 0, mean, nodata)
    var = np.where(count > 0, var, nodata)
    mean_grid = RasterGrid(
        first.origin, first.pixel_size, mean, nodata, Semantic.HEIGHT_M, first.units
    )
    var_grid = RasterGrid(
        first.origin, first.pixel_size, var, nodata, Semantic.VARIANCE_M2, first.units
    )
    return mean_grid, var_grid


def _covered_pixels(footprint: FootprintRecord, grid: RasterGrid):
    """(rows, cols) of pixels whose centers fall inside the footprint.

    Falls back to the centroid's pixel for footprints smaller than a pixel.
    Returned indices are in row-major order.
    """
    geom = footprint.geometry
    x0, y0 = grid.origin
    dx, dy = grid.pixel_size
    bx0, by0, bx1, by1 = geom.bounds
    c0 = max(int(np.floor((bx0 - x0) / dx - 0.5)), 0)
    c1 = min(int(np.ceil((bx1 - x0) / dx - 0.5)) + 1, grid.width)
    r0 = max(int(np.floor((y0 - by1) / dy - 0.5)), 0)
    r1 = min(int(np.ceil((y0 - by0) / dy - 0.5)) + 1, grid.height)
    if c0 < c1 and r0 < r1:
        xs = x0 + dx * (np.arange(c0, c1) + 0.5)
        ys = y0 - dy * (np.arange(r0, r1) + 0.5)
        px, py = np.meshgrid(xs, ys)
        inside = points_in_ring(geom.exterior, px.ravel(), py.ravel())
        for hole in geom.holes:
            inside &= ~points_in_ring(hole, px.ravel(), py.ravel())
        if inside.any():
            rr, cc = np.divmod(np.nonzero(inside)[0], c1 - c0)
            return rr + r0, cc + c0
    cx, cy = geom.centroid
    col = int(np.floor((cx - x0) / dx))
    row = int(np.floor((y0 - cy) / dy))
    if 0 <= col < grid.width and 0 <= row < grid.height:
        return np.asarray([row]), np.asarray([col])
    return np.asarray([], dtype=int), np.asarray([], dtype=int)


def assign_height(
    footprint: FootprintRecord,
    height: RasterGrid,
    variance: Optional[RasterGrid] = None,
) -> Lod1Record:
    """Extrude one footprint by the max height inside it.

    Negative raw heights are clamped to 0 before taking the max. The
    uncertainty is the variance at the argmax pixel, first in row-major order
    on ties. Returns a record with Missing (None) fields when no covered
    pixel holds a valid height.
    """
    height.require_semantic(Semantic.HEIGHT_M)
    if variance is not None:
        variance.require_semantic(Semantic.VARIANCE_M2)
        if not height.same_geometry(variance):
            raise GridMismatch("height and variance grids differ")
    rows, cols = _covered_pixels(footprint, height)
    if len(rows):
        vals = height.values[rows, cols].astype(float)
        valid = (
            np.ones(len(rows), dtype=bool)
            if height.nodata is None
            else vals != height.nodata
        )
    else:
        valid = np.zeros(0, dtype=bool)
    if not valid.any():
        return Lod1Record(footprint, None, None, None, height_valid=False)
    vals = np.where(vals < 0, 0.0, vals)
    idx = np.nonzero(valid)[0]
    best = idx[int(np.argmax(vals[idx]))]  # argmax takes the first tie
    h = float(vals[best])
    unc = None
    if variance is not None:
        v = float(variance.values[rows[best], cols[best]])
        unc = None if (variance.nodata is not None and v == variance.nodata) else v
    volume = polygon_area_m2(footprint.geometry) * h
    return Lod1Record(
        footprint, h, unc, volume, height_valid=h >= MIN_VALID_HEIGHT_M
    )


def build_lod1(
    fused: Sequence[FootprintRecord],
    height: RasterGrid,
    variance: Optional[RasterGrid] = None,
    min_height_m: float = MIN_VALID_HEIGHT_M,
) -> tuple[list[Lod1Record], float]:
    """Extrude every record; completeness is the valid-height fraction.

    A record counts toward completeness iff its height is present and at
    least ``min_height_m``. Records below the threshold are kept but flagged
    invalid.
    """
    records = []
    n_valid = 0
    for rec in fused:
        out = assign_height(rec, height, variance)
        out.height_valid = out.height_m is not None and out.height_m >= min_height_m
        records.append(out)
        n_valid += out.height_valid
    completeness = n_valid / len(records) if records else 0.0
    return records, completeness
