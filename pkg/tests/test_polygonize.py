import math

import numpy as np
import pytest
import shapely
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from buildingkit.errors import InvalidGrid, SemanticMismatch
from buildingkit.geometry import (
    FootprintRecord,
    GeoPolygon,
    LocalEqualArea,
    polygon_area_m2,
    shoelace_area,
)
from buildingkit.polygonize import (
    FOUR_CONNECTED,
    SimplifyParams,
    filter_false_positives,
    regularize_mask,
    simplify,
    threshold_mask,
    trace_polygons,
)
from buildingkit.raster import GridSpec, RasterGrid, Semantic, rasterize

from conftest import square


def prob_grid(values, pixel=1.0, units="m", nodata=None):
    values = np.asarray(values, dtype=float)
    return RasterGrid((0.0, values.shape[0] * pixel), (pixel, pixel), values,
                      nodata, Semantic.PROBABILITY, units)


def bin_grid(values, pixel=1.0, units="m", origin=None):
    values = np.asarray(values, dtype=np.uint8)
    if origin is None:
        origin = (0.0, values.shape[0] * pixel)
    return RasterGrid(origin, (pixel, pixel), values, None, Semantic.BINARY_MASK, units)


class TestThreshold:
    def test_all_high(self):
        out = threshold_mask(prob_grid(np.full((3, 3), 0.9)))
        assert (out.values == 1).all()

    def test_all_low(self):
        out = threshold_mask(prob_grid(np.full((3, 3), 0.4)))
        assert (out.values == 0).all()

    def test_boundary_inclusive(self):
        out = threshold_mask(prob_grid([[0.49, 0.50, 0.51]]))
        np.testing.assert_array_equal(out.values, [[0, 1, 1]])

    def test_nodata_counts_as_zero(self):
        out = threshold_mask(prob_grid([[0.9, -1.0]], nodata=-1.0))
        np.testing.assert_array_equal(out.values, [[1, 0]])

    def test_semantic_check(self):
        g = bin_grid(np.zeros((2, 2)))
        with pytest.raises(SemanticMismatch):
            threshold_mask(g)

    def test_threshold_range(self):
        with pytest.raises(InvalidGrid):
            threshold_mask(prob_grid(np.zeros((2, 2))), t=1.0)

    @given(t1=st.floats(0.05, 0.95), t2=st.floats(0.05, 0.95))
    @settings(max_examples=40, deadline=None)
    def test_monotone_in_threshold(self, t1, t2):
        rng = np.random.default_rng(99)
        grid = prob_grid(rng.random((12, 12)))
        lo, hi = sorted([t1, t2])
        a = threshold_mask(grid, hi).values
        b = threshold_mask(grid, lo).values
        assert (b >= a).all()


class TestRegularize:
    def test_clean_rectangle_unchanged(self):
        vals = np.zeros((8, 8), np.uint8)
        vals[2:6, 2:7] = 1
        out = regularize_mask(bin_grid(vals))
        np.testing.assert_array_equal(out.values, vals)

    def test_isolated_pixel_removed(self):
        vals = np.zeros((8, 8), np.uint8)
        vals[2:6, 2:6] = 1
        vals[7, 7] = 1
        out = regularize_mask(bin_grid(vals))
        expected = vals.copy()
        expected[7, 7] = 0
        np.testing.assert_array_equal(out.values, expected)

    def test_single_pixel_hole_filled(self):
        vals = np.zeros((9, 9), np.uint8)
        vals[1:8, 1:8] = 1
        vals[4, 4] = 0
        out = regularize_mask(bin_grid(vals))
        assert out.values[4, 4] == 1


class TestTrace:
    def test_single_pixel_is_unit_square(self):
        vals = np.zeros((4, 4), np.uint8)
        vals[1, 2] = 1
        polys = trace_polygons(bin_grid(vals, pixel=3.0))
        assert len(polys) == 1
        assert abs(shoelace_area(polys[0].exterior)) == pytest.approx(9.0)
        xs = polys[0].exterior[:, 0]
        ys = polys[0].exterior[:, 1]
        assert set(zip(xs, ys)) == {(6.0, 9.0), (9.0, 9.0), (9.0, 6.0), (6.0, 6.0)}

    def test_diagonal_pixels_stay_separate(self):
        vals = np.zeros((3, 3), np.uint8)
        vals[0, 0] = vals[1, 1] = 1
        polys = trace_polygons(bin_grid(vals))
        assert len(polys) == 2

    def test_random_masks_match_labeling_oracle(self, rng):
        for _ in range(25):
            vals = (rng.random((64, 64)) < rng.uniform(0.25, 0.7)).astype(np.uint8)
            grid = bin_grid(vals)
            polys = trace_polygons(grid)
            labels, n = ndimage.label(vals, structure=FOUR_CONNECTED)
            assert len(polys) == n
            total = sum(
                abs(shoelace_area(p.exterior))
                - sum(abs(shoelace_area(h)) for h in p.holes)
                for p in polys
            )
            assert total == vals.sum()

    def test_all_traced_polygons_are_valid(self, rng):
        for _ in range(10):
            vals = (rng.random((32, 32)) < 0.5).astype(np.uint8)
            for p in trace_polygons(bin_grid(vals)):
                assert p.shapely.is_valid

    def test_round_trip_rasterize(self, rng):
        vals = (rng.random((40, 40)) < 0.45).astype(np.uint8)
        grid = bin_grid(vals)
        polys = trace_polygons(grid)
        back = rasterize(polys, GridSpec.of(grid))
        np.testing.assert_array_equal(back.values.astype(np.uint8), vals)

    def test_hole_preserved(self):
        vals = np.zeros((7, 7), np.uint8)
        vals[1:6, 1:6] = 1
        vals[3, 3] = 0
        polys = trace_polygons(bin_grid(vals))
        assert len(polys) == 1
        assert len(polys[0].holes) == 1

    def test_empty_mask(self):
        assert trace_polygons(bin_grid(np.zeros((5, 5)))) == []


def staircase_rectangle(step=1.0, n_steps=6, rise=0.05):
    """A rectangle whose top edge is a fine staircase."""
    pts = [[0.0, 0.0], [step * n_steps, 0.0]]
    x = step * n_steps
    y = 4.0
    pts.append([x, y])
    for k in range(n_steps, 0, -1):
        pts.append([(k - 1) * step, y + (n_steps - k + 1) * rise])
        if k > 1:
            pts.append([(k - 1) * step, y + (n_steps - k + 1) * rise])
    pts.append([0.0, 0.0])
    return np.asarray(pts)


class TestSimplify:
    def frame(self):
        return LocalEqualArea(9.0, 45.0)

    def geo(self, ring_m):
        frame = self.frame()
        lon, lat = frame.inverse(ring_m[:, 0], ring_m[:, 1])
        return GeoPolygon(np.column_stack([lon, lat]))

    def test_staircase_collapses_to_rectangle(self):
        # axis-aligned staircase with 0.2 m risers along the top edge
        pts = [[0.0, 0.0], [16.0, 0.0], [16.0, 8.0]]
        y = 8.0
        for k in range(7):
            pts.append([16.0 - 2.0 * (k + 1), y])
            y += 0.2
            pts.append([16.0 - 2.0 * (k + 1), y])
        pts.append([0.0, y])
        pts.append([0.0, 0.0])
        p = self.geo(np.asarray(pts))
        out = simplify(p, SimplifyParams(tolerance_m=3.0, min_area_m2=0.0))
        assert out is not None
        assert len(out.exterior) <= 6  # 4-ish corners + closing vertex

    def test_zero_tolerance_removes_only_collinear(self):
        ring = np.asarray(
            [[0, 0], [5, 0], [10, 0], [10, 4], [10, 8], [0, 8], [0, 4], [0, 0]],
            dtype=float,
        )
        p = self.geo(ring)
        out = simplify(p, SimplifyParams(tolerance_m=0.0, min_area_m2=0.0))
        assert len(out.exterior) == 5
        assert polygon_area_m2(out) == pytest.approx(polygon_area_m2(p), rel=1e-9)

    def test_hausdorff_within_tolerance_sampled(self, rng):
        frame = self.frame()
        for _ in range(12):
            # random orthogonal polygon via traced random mask
            vals = (rng.random((12, 12)) < 0.55).astype(np.uint8)
            grid = RasterGrid((0.0, 36.0), (3.0, 3.0), vals, None,
                              Semantic.BINARY_MASK, "m")
            for poly_m in trace_polygons(grid):
                ring_m = poly_m.exterior
                lon, lat = frame.inverse(ring_m[:, 0], ring_m[:, 1])
                try:
                    p = GeoPolygon(np.column_stack([lon, lat]))
                except Exception:
                    continue
                tol = 2.5
                out = simplify(p, SimplifyParams(tolerance_m=tol, min_area_m2=0.0))
                if out is None or out is p:
                    continue
                a = shapely.LineString(frame.project_ring(p.exterior))
                b = shapely.LineString(frame.project_ring(out.exterior))
                # dense symmetric sampled Hausdorff
                fractions = np.linspace(0, 1, 400)
                d = 0.0
                for s_line, t_line in [(a, b), (b, a)]:
                    samples = shapely.line_interpolate_point(
                        s_line, fractions, normalized=True
                    )
                    d = max(d, float(shapely.distance(samples, t_line).max()))
                assert d <= tol * 1.01

    def test_area_error_bounded_by_perimeter_times_tolerance(self, rng):
        frame = self.frame()
        for _ in range(8):
            vals = (rng.random((10, 10)) < 0.5).astype(np.uint8)
            grid = RasterGrid((0.0, 30.0), (3.0, 3.0), vals, None,
                              Semantic.BINARY_MASK, "m")
            for poly_m in trace_polygons(grid):
                lon, lat = frame.inverse(poly_m.exterior[:, 0], poly_m.exterior[:, 1])
                try:
                    p = GeoPolygon(np.column_stack([lon, lat]))
                except Exception:
                    continue
                tol = 2.0
                out = simplify(p, SimplifyParams(tolerance_m=tol, min_area_m2=0.0))
                if out is None:
                    continue
                ring_m = frame.project_ring(p.exterior)
                perimeter = np.sum(np.hypot(*np.diff(ring_m, axis=0).T))
                assert abs(polygon_area_m2(out) - polygon_area_m2(p)) <= perimeter * tol + 1e-9

    def test_small_area_dropped(self):
        p = self.geo(square(0, 0, 3.0))
        assert simplify(p, SimplifyParams(min_area_m2=20.0)) is None

    def test_vertex_count_never_increases(self, rng):
        frame = self.frame()
        angles = np.sort(rng.uniform(0, 2 * math.pi, 14))
        ring_m = np.column_stack(
            [np.cos(angles), np.sin(angles)]
        ) * rng.uniform(20, 60, 14)[:, None]
        ring_m = np.vstack([ring_m, ring_m[:1]])
        p = self.geo(ring_m)
        out = simplify(p, SimplifyParams(tolerance_m=5.0, min_area_m2=0.0))
        assert out is not None
        assert len(out.exterior) <= len(p.exterior)


class TestFilterFalsePositives:
    def landcover(self):
        # one built-up pixel block at the center of a 100x100 10m grid
        vals = np.zeros((100, 100), np.uint8)
        vals[48:52, 48:52] = 1
        return bin_grid(vals, pixel=10.0)

    def rec(self, cx, cy, side=20.0, rid="r"):
        return FootprintRecord(rid, GeoPolygon(square(cx, cy, side)), "osm")

    def test_polygon_on_builtup_kept(self):
        kept, report = filter_false_positives([self.rec(500, 500)], self.landcover())
        assert len(kept) == 1 and report.n_kept == 1

    def test_polygon_1km_away_removed(self):
        kept, report = filter_false_positives(
            [self.rec(500, 1500 + 500)], self.landcover(), radius_m=250.0
        )
        assert kept == [] and report.n_removed == 1

    def test_outside_extent_counted(self):
        kept, report = filter_false_positives(
            [self.rec(5000, 5000)], self.landcover()
        )
        assert kept == [] and report.n_outside_extent == 1

    def test_matches_distance_transform_oracle(self, rng):
        lc = self.landcover()
        radius = 250.0
        recs = [
            self.rec(rng.uniform(50, 950), rng.uniform(50, 950), 14.0, f"r{k}")
            for k in range(300)
        ]
        kept, _ = filter_false_positives(recs, lc, radius)
        kept_ids = {r.id for r in kept}
        # chessboard distance transform: dilation by square window of radius
        # r pixels reaches exactly the pixels with distance <= r
        dist = ndimage.distance_transform_cdt(
            lc.values == 0, metric="chessboard"
        )
        r_px = int(np.floor(radius / 10.0 + 0.5))
        for rec in recs:
            spec = GridSpec.of(lc)
            burned = rasterize([rec], spec).values.astype(bool)
            if not burned.any():
                cx, cy = rec.geometry.centroid
                col = int((cx - lc.origin[0]) / 10.0)
                row = int((lc.origin[1] - cy) / 10.0)
                burned[row, col] = True
            expected = bool((dist[burned] <= r_px).any())
            assert (rec.id in kept_ids) == expected

    def test_infinite_radius_keeps_everything(self, rng):
        lc = self.landcover()
        recs = [self.rec(rng.uniform(50, 950), rng.uniform(50, 950), 10.0, f"k{k}")
                for k in range(20)]
        kept, _ = filter_false_positives(recs, lc, radius_m=1e6)
        assert len(kept) == len(recs)

    def test_zero_radius_empty_mask_removes_everything(self):
        vals = np.zeros((50, 50), np.uint8)
        lc = bin_grid(vals, pixel=10.0)
        kept, _ = filter_false_positives([self.rec(250, 250)], lc, radius_m=0.0)
        assert kept == []
