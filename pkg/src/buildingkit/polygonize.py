"""Probability rasters to clean building polygons.

threshold -> regularize -> trace pixel boundaries -> simplify -> filter.

Boundary tracing emits one polygon per 4-connected component of set pixels
(background treated 8-connected), following pixel edges exactly, so the total
polygon area equals the set-pixel count times the pixel area with no
approximation. Interior cavities become polygon holes; at diagonal pinches a
hole may touch its shell in a single vertex, which keeps rings simple.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import InvalidGrid
from .geometry import (
    FootprintRecord,
    GeoPolygon,
    LocalEqualArea,
    points_in_ring,
    polygon_area_m2,
    shoelace_area,
)
from .raster import (
    GridSpec,
    RasterGrid,
    Semantic,
    binary_opening_closing,
    dilate_mask,
    radius_to_pixels,
)

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def threshold_mask(prob: RasterGrid, t: float = 0.5) -> RasterGrid:
    """Binary mask: pixel is 1 iff probability >= t; nodata counts as 0."""
    prob.require_semantic(Semantic.PROBABILITY)
    if not (0.0 < t < 1.0):
        raise InvalidGrid(f"threshold {t} outside (0, 1)")
    mask = (prob.values >= t) & prob.data_mask()
    return RasterGrid(
        prob.origin, prob.pixel_size, mask.astype(np.uint8), None,
        Semantic.BINARY_MASK, prob.units,
    )


def regularize_mask(mask: RasterGrid) -> RasterGrid:
    """Mask cleanup slot: morphological opening then closing, 3x3 window.

    Stands in for a learned mask refiner; drops isolated pixels and fills
    single-pixel holes.
    """
    return binary_opening_closing(mask, size=3)


# Directed boundary edges in screen coordinates (x = column, y = row, y down),
# traced with the component on the right of the travel direction. Directions:
# 0 = +x, 1 = +y, 2 = -x, 3 = -y; a clockwise (right) turn is +1 mod 4.
_DELTA = ((1, 0), (0, 1), (-1, 0), (0, -1))


def _component_rings(comp: np.ndarray, row0: int, col0: int) -> list[np.ndarray]:
    """Closed vertex rings (grid coordinates) bounding one pixel component."""
    padded = np.pad(comp, 1)
    core = padded[1:-1, 1:-1]
    exposures = (
        core & ~padded[:-2, 1:-1],   # top edge exposed    -> +x
        core & ~padded[1:-1, 2:],    # right edge exposed  -> +y
        core & ~padded[2:, 1:-1],    # bottom edge exposed -> -x
        core & ~padded[1:-1, :-2],   # left edge exposed   -> -y
    )
    width = comp.shape[1] + 1
    starts: list[int] = []
    dirs: list[int] = []
    # start vertex of each directed edge, walking the pixel square clockwise
    corner = ((0, 0), (1, 0), (1, 1), (0, 1))  # (dx, dy) from pixel's TL vertex
    for d, exposed in enumerate(exposures):
        rr, cc = np.nonzero(exposed)
        ox, oy = corner[d]
        starts.extend(((rr + oy) * width + (cc + ox)).tolist())
        dirs.extend([d] * len(rr))
    if not starts:
        return []

    # vertex -> outgoing edge index per direction
    outgoing: dict[int, list[int]] = {}
    for i, (v, d) in enumerate(zip(starts, dirs)):
        outgoing.setdefault(v, [-1, -1, -1, -1])[d] = i

    used = np.zeros(len(starts), dtype=bool)
    rings: list[np.ndarray] = []
    for first in range(len(starts)):
        if used[first]:
            continue
        ring_v = [starts[first]]
        i = first
        while True:
            used[i] = True
            d = dirs[i]
            dx, dy = _DELTA[d]
            v_next = starts[i] + dy * width + dx
            ring_v.append(v_next)
            if v_next == starts[first]:
                break
            slots = outgoing[v_next]
            # leftmost available turn: at a diagonal pinch this splits the
            # cavity loop off the outer loop, touching it in one vertex
            for turn in (3, 0, 1, 2):
                j = slots[(d + turn) % 4]
                if j >= 0 and not used[j]:
                    i = j
                    break
            else:
                raise AssertionError("open boundary chain")
        ys, xs = np.divmod(np.asarray(ring_v), width)
        pts = np.column_stack([xs + col0, ys + row0]).astype(float)
        rings.append(_drop_collinear_grid(pts))
    return rings


def _drop_collinear_grid(ring: np.ndarray) -> np.ndarray:
    """Merge straight runs of unit edges (exact arithmetic on grid coords)."""
    pts = ring[:-1]
    prev_d = pts - np.roll(pts, 1, axis=0)
    next_d = np.roll(pts, -1, axis=0) - pts
    keep = (prev_d[:, 0] * next_d[:, 1] - prev_d[:, 1] * next_d[:, 0]) != 0
    kept = pts[keep]
    return np.vstack([kept, kept[:1]])


def trace_polygons(mask: RasterGrid) -> list[GeoPolygon]:
    """Vectorize a binary mask into pixel-boundary polygons.

    Returns one polygon per 4-connected component, in the mask's coordinate
    frame and ordered by component label (top-left first).
    """
    mask.require_semantic(Semantic.BINARY_MASK)
    labels, n = ndimage.label(mask.values == 1, structure=FOUR_CONNECTED)
    if n == 0:
        return []
    x0, y0 = mask.origin
    dx, dy = mask.pixel_size
    polygons: list[GeoPolygon] = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        comp = labels[sl] == i
        rings = _component_rings(comp, sl[0].start, sl[1].start)
        exterior = None
        holes = []
        for ring in rings:
            geo = np.column_stack([x0 + ring[:, 0] * dx, y0 - ring[:, 1] * dy])
            # tracing runs clockwise around components in geographic axes,
            # so the (single) negative-area ring is the outer boundary
            if shoelace_area(geo) < 0:
                exterior = geo
            else:
                holes.append(geo)
        polygons.append(GeoPolygon(exterior, holes, validate=False))
    return polygons


@dataclass(frozen=True)
class SimplifyParams:
    tolerance_m: float = 3.0
    min_area_m2: float = 20.0
    min_ring_vertices: int = 4

    def __post_init__(self):
        if self.tolerance_m < 0:
            raise ValueError("tolerance_m must be >= 0")
        if self.min_area_m2 < 0:
            raise ValueError("min_area_m2 must be >= 0")
        if self.min_ring_vertices < 4:
            raise ValueError("min_ring_vertices must be >= 4 (closed ring)")


def _douglas_peucker(points: np.ndarray, tol: float) -> np.ndarray:
    """Indices kept by Douglas-Peucker on an open polyline (endpoints stay)."""
    n = len(points)
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2:
            continue
        seg = points[hi] - points[lo]
        length = np.hypot(*seg)
        mid = points[lo + 1 : hi] - points[lo]
        if length == 0.0:
            dist = np.hypot(mid[:, 0], mid[:, 1])
        else:
            dist = np.abs(seg[0] * mid[:, 1] - seg[1] * mid[:, 0]) / length
        far = int(np.argmax(dist))
        if dist[far] > tol:
            split = lo + 1 + far
            keep[split] = True
            stack.append((lo, split))
            stack.append((split, hi))
    return np.nonzero(keep)[0]


def _simplify_ring(ring: np.ndarray, frame: LocalEqualArea, tol_m: float) -> np.ndarray:
    """Simplify one closed ring; output vertices are a subset of the input's."""
    pts = frame.project_ring(ring[:-1])
    n = len(pts)
    if n <= 3:
        return ring
    # split the ring at vertex 0 and its farthest companion, DP each half
    far = int(np.argmax(np.hypot(*(pts - pts[0]).T)))
    first = _douglas_peucker(pts[: far + 1], tol_m)
    closed = np.vstack([pts[far:], pts[:1]])
    second = (far + _douglas_peucker(closed, tol_m)) % n
    kept = np.unique(np.concatenate([first, second]))
    kept = _strip_collinear(pts, kept)
    out = ring[kept]
    return np.vstack([out, out[:1]])


_COLLINEAR_EPS_M = 1e-6


def _strip_collinear(pts: np.ndarray, kept: np.ndarray) -> np.ndarray:
    # drop vertices within a micrometer of their neighbors' chord; projection
    # round trips leave nanometer jitter on exactly-collinear source vertices
    changed = True
    while changed and len(kept) > 3:
        p = pts[kept]
        chord = np.roll(p, -1, axis=0) - np.roll(p, 1, axis=0)
        a = p - np.roll(p, 1, axis=0)
        cross = np.abs(chord[:, 0] * a[:, 1] - chord[:, 1] * a[:, 0])
        length = np.hypot(chord[:, 0], chord[:, 1])
        keep = cross > _COLLINEAR_EPS_M * np.maximum(length, 1e-12)
        changed = not keep.all()
        kept = kept[keep]
    return kept


def simplify(p: GeoPolygon, params: SimplifyParams) -> Optional[GeoPolygon]:
    """Reduce vertex count within a Hausdorff tolerance; drop small polygons.

    Returns ``None`` when the polygon falls below the area floor or its
    exterior collapses below the minimum ring size. Holes that collapse are
    removed. If the simplified geometry turns out invalid the input polygon
    is returned unchanged.
    """
    if polygon_area_m2(p) < params.min_area_m2:
        return None
    frame = p.local_frame()
    exterior = _simplify_ring(p.exterior, frame, params.tolerance_m)
    if len(exterior) < params.min_ring_vertices:
        return None
    holes = []
    for hole in p.holes:
        simplified = _simplify_ring(hole, frame, params.tolerance_m)
        if len(simplified) >= params.min_ring_vertices:
            holes.append(simplified)
    try:
        out = GeoPolygon(exterior, holes, validate=True)
    except Exception:
        return p
    return out


@dataclass
class FilterReport:
    """Bookkeeping for the false-positive filter."""

    n_input: int = 0
    n_kept: int = 0
    n_removed: int = 0
    n_outside_extent: int = 0


def filter_false_positives(
    polys: Sequence[FootprintRecord],
    landcover_builtup: RasterGrid,
    radius_m: float = 250.0,
) -> tuple[list[FootprintRecord], FilterReport]:
    """Drop polygons with no overlap against the dilated built-up mask.

    A polygon is kept iff at least one mask pixel it covers (pixel-center
    rule; the centroid pixel for sub-pixel polygons) is set after dilating
    the built-up mask by ``radius_m``. Polygons entirely outside the mask
    extent are removed and tallied separately. The mask must live in the same
    coordinate frame as the polygons.
    """
    landcover_builtup.require_semantic(Semantic.BINARY_MASK)
    dilated = dilate_mask(landcover_builtup, radius_m)
    values = dilated.values
    x0, y0 = dilated.origin
    dx, dy = dilated.pixel_size
    h, w = values.shape
    report = FilterReport(n_input=len(polys))
    kept: list[FootprintRecord] = []
    for rec in polys:
        bx0, by0, bx1, by1 = rec.geometry.bounds
        c0 = max(int(np.floor((bx0 - x0) / dx - 0.5)), 0)
        c1 = min(int(np.ceil((bx1 - x0) / dx - 0.5)) + 1, w)
        r0 = max(int(np.floor((y0 - by1) / dy - 0.5)), 0)
        r1 = min(int(np.ceil((y0 - by0) / dy - 0.5)) + 1, h)
        if c0 >= c1 or r0 >= r1:
            report.n_outside_extent += 1
            report.n_removed += 1
            continue
        xs = x0 + dx * (np.arange(c0, c1) + 0.5)
        ys = y0 - dy * (np.arange(r0, r1) + 0.5)
        px, py = np.meshgrid(xs, ys)
        inside = points_in_ring(rec.geometry.exterior, px.ravel(), py.ravel())
        for hole in rec.geometry.holes:
            inside &= ~points_in_ring(hole, px.ravel(), py.ravel())
        if inside.any():
            hit = values[r0:r1, c0:c1].ravel()[inside].any()
        else:
            # sub-pixel polygon: fall back to the centroid's pixel
            cx, cy = rec.geometry.centroid
            col = int(np.floor((cx - x0) / dx))
            row = int(np.floor((y0 - cy) / dy))
            if not (0 <= col < w and 0 <= row < h):
                report.n_outside_extent += 1
                report.n_removed += 1
                continue
            hit = bool(values[row, col])
        if hit:
            kept.append(rec)
            report.n_kept += 1
        else:
            report.n_removed += 1
    return kept, report
