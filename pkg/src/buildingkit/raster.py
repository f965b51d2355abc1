"""Georeferenced raster grids, rasterization and binary-mask morphology.

A :class:`RasterGrid` is a planar, axis-aligned grid. ``origin`` is the
upper-left corner of the upper-left pixel; rows grow downward (decreasing y),
columns grow rightward (increasing x); ``pixel_size`` is positive in both
axes. Grid units are either degrees (lon/lat rasters) or meters (local
frames), recorded in ``units``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import GridMismatch, InvalidGrid, SemanticMismatch
from .geometry import FootprintRecord, GeoPolygon, meters_per_degree, points_in_ring


class Semantic(Enum):
    PROBABILITY = "probability"
    HEIGHT_M = "height_m"
    BINARY_MASK = "binary_mask"
    VARIANCE_M2 = "variance_m2"
    VOLUME_M3 = "volume_m3"
    LANDCOVER = "landcover"
    REFLECTANCE = "reflectance"


@dataclass(frozen=True, eq=False)
class RasterGrid:
    """2-D scalar grid with georeferencing and a nodata sentinel.

    Values arrays are treated as immutable after construction; operations
    return new grids. Height rasters may carry negative raw model outputs;
    consumers clamp them at use (see :func:`buildingkit.lod1.assign_height`).
    """

    origin: tuple[float, float]
    pixel_size: tuple[float, float]
    values: np.ndarray
    nodata: Optional[float]
    semantic: Semantic
    units: str = "m"

    def __init__(self, origin, pixel_size, values, nodata, semantic, units="m"):
        values = np.asarray(values)
        if values.ndim != 2 or values.size == 0:
            raise InvalidGrid("values must be a non-empty 2-D array")
        dx, dy = float(pixel_size[0]), float(pixel_size[1])
        if dx <= 0 or dy <= 0:
            raise InvalidGrid("pixel_size must be positive")
        if units not in ("m", "deg"):
            raise InvalidGrid(f"unknown grid units {units!r}")
        object.__setattr__(self, "origin", (float(origin[0]), float(origin[1])))
        object.__setattr__(self, "pixel_size", (dx, dy))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "nodata", None if nodata is None else float(nodata))
        object.__setattr__(self, "semantic", Semantic(semantic))
        object.__setattr__(self, "units", units)
        self._check_range()

    def _check_range(self):
        data = self.data_mask()
        vals = self.values[data]
        if self.semantic is Semantic.BINARY_MASK:
            if vals.size and not np.isin(vals, (0, 1)).all():
                raise InvalidGrid("binary mask holds values outside {0, 1}")
        elif self.semantic is Semantic.PROBABILITY:
            if vals.size and ((vals < 0).any() or (vals > 1).any()):
                raise InvalidGrid("probabilities outside [0, 1]")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) of the full grid footprint."""
        x0, y0 = self.origin
        dx, dy = self.pixel_size
        return (x0, y0 - self.height * dy, x0 + self.width * dx, y0)

    def x_centers(self) -> np.ndarray:
        x0 = self.origin[0]
        dx = self.pixel_size[0]
        return x0 + dx * (np.arange(self.width) + 0.5)

    def y_centers(self) -> np.ndarray:
        y0 = self.origin[1]
        dy = self.pixel_size[1]
        return y0 - dy * (np.arange(self.height) + 0.5)

    def data_mask(self) -> np.ndarray:
        """Boolean array, True where the pixel holds data."""
        if self.nodata is None:
            return np.ones(self.values.shape, dtype=bool)
        if np.isnan(self.nodata):
            return ~np.isnan(self.values)
        return self.values != self.nodata

    def same_geometry(self, other: "RasterGrid") -> bool:
        return (
            self.values.shape == other.values.shape
            and np.allclose(self.origin, other.origin)
            and np.allclose(self.pixel_size, other.pixel_size)
            and self.units == other.units
        )

    def require_semantic(self, semantic: Semantic) -> "RasterGrid":
        if self.semantic is not semantic:
            raise SemanticMismatch(
                f"expected {semantic.value} raster, got {self.semantic.value}"
            )
        return self

    def meters_per_pixel(self) -> tuple[float, float]:
        """Pixel extent in meters; degree grids evaluated at center latitude."""
        dx, dy = self.pixel_size
        if self.units == "m":
            return (dx, dy)
        lat_c = 0.5 * (self.bounds[1] + self.bounds[3])
        mx, my = meters_per_degree(lat_c)
        return (dx * mx, dy * my)

    def with_values(self, values: np.ndarray, semantic: Optional[Semantic] = None,
                    nodata: Optional[float] = "unchanged") -> "RasterGrid":
        return RasterGrid(
            self.origin,
            self.pixel_size,
            values,
            self.nodata if nodata == "unchanged" else nodata,
            semantic or self.semantic,
            self.units,
        )


@dataclass(frozen=True)
class GridSpec:
    """Geometry-only description of a raster grid."""

    origin: tuple[float, float]
    pixel_size: tuple[float, float]
    width: int
    height: int
    units: str = "m"

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidGrid("grid spec must span at least one pixel")
        if self.pixel_size[0] <= 0 or self.pixel_size[1] <= 0:
            raise InvalidGrid("pixel_size must be positive")

    @classmethod
    def of(cls, grid: RasterGrid) -> "GridSpec":
        return cls(grid.origin, grid.pixel_size, grid.width, grid.height, grid.units)

    @classmethod
    def covering(cls, bounds, pixel_size, units="m", pad_px: int = 0) -> "GridSpec":
        """Smallest grid at the given resolution covering a bounding box."""
        xmin, ymin, xmax, ymax = bounds
        dx, dy = pixel_size
        w = max(int(np.ceil((xmax - xmin) / dx)), 1) + 2 * pad_px
        h = max(int(np.ceil((ymax - ymin) / dy)), 1) + 2 * pad_px
        return cls((xmin - pad_px * dx, ymax + pad_px * dy), (dx, dy), w, h, units)

    def x_centers(self) -> np.ndarray:
        return self.origin[0] + self.pixel_size[0] * (np.arange(self.width) + 0.5)

    def y_centers(self) -> np.ndarray:
        return self.origin[1] - self.pixel_size[1] * (np.arange(self.height) + 0.5)


def _ring_in_grid_units(ring: np.ndarray, transform) -> np.ndarray:
    if transform is None:
        return ring
    x, y = transform(ring[:, 0], ring[:, 1])
    return np.column_stack([x, y])


def rasterize(
    records: Sequence[FootprintRecord | GeoPolygon],
    spec: GridSpec,
    values: float | Sequence[float] = 1.0,
    background: float = 0.0,
    nodata: Optional[float] = None,
    semantic: Semantic = Semantic.BINARY_MASK,
    transform=None,
) -> RasterGrid:
    """Burn polygons into a grid by pixel-center containment.

    A pixel is set iff its center lies inside some polygon; later records
    overwrite earlier ones where they overlap, so output depends on record
    order under overlaps. ``values`` is a single scalar or one scalar per
    record. ``transform`` optionally maps polygon (lon, lat) to grid
    coordinates; by default polygons are assumed to live in grid units
    already.
    """
    out = np.full((spec.height, spec.width), background, dtype=float)
    if np.isscalar(values):
        values = [float(values)] * len(records)
    elif len(values) != len(records):
        raise InvalidGrid("one burn value per record required")
    xs = spec.x_centers()
    ys = spec.y_centers()
    dx, dy = spec.pixel_size
    x0, y0 = spec.origin
    for rec, val in zip(records, values):
        poly = rec.geometry if isinstance(rec, FootprintRecord) else rec
        ext = _ring_in_grid_units(poly.exterior, transform)
        holes = [_ring_in_grid_units(h, transform) for h in poly.holes]
        gx0, gy0 = ext[:, 0].min(), ext[:, 1].min()
        gx1, gy1 = ext[:, 0].max(), ext[:, 1].max()
        c0 = max(int(np.floor((gx0 - x0) / dx - 0.5)), 0)
        c1 = min(int(np.ceil((gx1 - x0) / dx - 0.5)) + 1, spec.width)
        r0 = max(int(np.floor((y0 - gy1) / dy - 0.5)), 0)
        r1 = min(int(np.ceil((y0 - gy0) / dy - 0.5)) + 1, spec.height)
        if c0 >= c1 or r0 >= r1:
            continue
        px, py = np.meshgrid(xs[c0:c1], ys[r0:r1])
        inside = points_in_ring(ext, px.ravel(), py.ravel())
        for h in holes:
            inside &= ~points_in_ring(h, px.ravel(), py.ravel())
        block = out[r0:r1, c0:c1].ravel()
        block[inside] = val
        out[r0:r1, c0:c1] = block.reshape(r1 - r0, c1 - c0)
    return RasterGrid(spec.origin, spec.pixel_size, out, nodata, semantic, spec.units)


def radius_to_pixels(radius_m: float, pixel_m: float) -> int:
    """Meters -> whole pixels, rounding half-up."""
    return int(np.floor(radius_m / pixel_m + 0.5))


def dilate_mask(mask: RasterGrid, radius_m: float) -> RasterGrid:
    """Morphological dilation by a square window of the given radius.

    The window side is ``2 * radius_px + 1`` pixels with the radius converted
    by half-up rounding, so the output always contains the input.
    """
    mask.require_semantic(Semantic.BINARY_MASK)
    if radius_m < 0:
        raise InvalidGrid("dilation radius must be >= 0")
    px, py = mask.meters_per_pixel()
    # windows wider than the grid saturate; clamping keeps memory bounded
    rx = min(radius_to_pixels(radius_m, px), mask.width)
    ry = min(radius_to_pixels(radius_m, py), mask.height)
    if rx == 0 and ry == 0:
        return mask
    data = mask.values.astype(np.uint8)
    # square-window dilation == separable running maximum
    dilated = ndimage.maximum_filter(
        data, size=(2 * ry + 1, 2 * rx + 1), mode="constant", cval=0
    )
    return mask.with_values(dilated.astype(np.uint8))


def binary_opening_closing(mask: RasterGrid, size: int = 3) -> RasterGrid:
    """Opening then closing with a square window; a mask-cleanup stand-in."""
    mask.require_semantic(Semantic.BINARY_MASK)
    data = mask.values.astype(bool)
    st = np.ones((size, size), dtype=bool)
    cleaned = ndimage.binary_closing(ndimage.binary_opening(data, structure=st), structure=st)
    return mask.with_values(cleaned.astype(np.uint8))


def resample_nearest(src: RasterGrid, spec: GridSpec, fill=None) -> RasterGrid:
    """Nearest-neighbor resampling of ``src`` onto ``spec``.

    Target pixels outside the source extent receive ``fill`` (defaults to the
    source nodata, or 0 if the source has none).
    """
    if src.units != spec.units:
        raise GridMismatch("resampling across units is not supported")
    if fill is None:
        fill = src.nodata if src.nodata is not None else 0.0
    xs = spec.x_centers()
    ys = spec.y_centers()
    cols = np.floor((xs - src.origin[0]) / src.pixel_size[0]).astype(int)
    rows = np.floor((src.origin[1] - ys) / src.pixel_size[1]).astype(int)
    ok_c = (cols >= 0) & (cols < src.width)
    ok_r = (rows >= 0) & (rows < src.height)
    out = np.full((spec.height, spec.width), fill, dtype=src.values.dtype)
    rr, cc = np.meshgrid(rows[ok_r], cols[ok_c], indexing="ij")
    sub = src.values[rr, cc]
    out[np.ix_(ok_r, ok_c)] = sub
    return RasterGrid(spec.origin, spec.pixel_size, out, src.nodata, src.semantic, spec.units)
