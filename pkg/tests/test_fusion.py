import numpy as np
import pytest

from buildingkit.errors import UndefinedResult
from buildingkit.fusion import (
    AdminUnit,
    clip_to_unit,
    fuse_admin,
    merge,
    area_gain_of,
    recall_of,
    select_base_source,
    select_secondary_source,
)
from buildingkit.geometry import (
    FootprintRecord,
    GeoPolygon,
    LocalEqualArea,
    polygon_area_m2,
)

from conftest import square

FRAME = LocalEqualArea(11.5, 48.1)


def rec(cx, cy, side=10.0, rid="r", source="osm"):
    return FootprintRecord(rid, GeoPolygon(square(cx, cy, side, FRAME)), source)


def unit(continent="EU", half=500.0):
    return AdminUnit("u1", (GeoPolygon(square(0, 0, 2 * half, FRAME)),), continent)


class TestSelectBase:
    def test_eu_prefers_osm(self):
        got = select_base_source(unit("EU"), {"osm", "open_buildings", "microsoft"})
        assert got == "osm"

    def test_sa_prefers_open_buildings(self):
        got = select_base_source(unit("SA"), {"osm", "open_buildings", "microsoft"})
        assert got == "open_buildings"

    def test_af_prefers_open_buildings(self):
        assert select_base_source(unit("AF"), {"osm", "open_buildings"}) == "open_buildings"

    def test_af_falls_back_down_fixed_order(self):
        assert select_base_source(unit("AF"), {"psr_derived"}) == "psr_derived"
        assert select_base_source(unit("AF"), {"clsm", "psr_derived"}) == "clsm"

    def test_eu_without_osm_falls_back(self):
        assert select_base_source(unit("EU"), {"microsoft", "clsm"}) == "microsoft"

    def test_unknown_source_last(self):
        assert select_base_source(unit("EU"), {"zz_custom"}) == "zz_custom"

    def test_empty_raises(self):
        with pytest.raises(UndefinedResult):
            select_base_source(unit(), set())


class TestRecall:
    def test_identity(self):
        primary = [rec(0, 0, rid="a"), rec(30, 0, rid="b")]
        assert recall_of(primary, primary) == pytest.approx(1.0, abs=1e-9)

    def test_disjoint(self):
        primary = [rec(0, 0, rid="a")]
        candidate = [rec(100, 0, rid="c")]
        assert recall_of(primary, candidate) == 0.0

    def test_half_coverage(self):
        # candidate covers exactly the left half of each primary square
        primary = [rec(0, 0, 10.0, "a"), rec(40, 0, 10.0, "b")]
        candidate = [
            FootprintRecord("ca", GeoPolygon(_half_square(0, 0, 10.0)), "microsoft"),
            FootprintRecord("cb", GeoPolygon(_half_square(40, 0, 10.0)), "microsoft"),
        ]
        assert recall_of(primary, candidate) == pytest.approx(0.5, rel=1e-3)

    def test_overlapping_candidates_not_double_counted(self):
        primary = [rec(0, 0, 10.0, "a")]
        candidate = [rec(0, 0, 10.0, "c1"), rec(0, 0, 10.0, "c2")]
        assert recall_of(primary, candidate) == pytest.approx(1.0, abs=1e-9)

    def test_empty_primary_undefined(self):
        with pytest.raises(UndefinedResult):
            recall_of([], [rec(0, 0)])

    def test_permutation_invariant(self, rng):
        primary = [rec(30 * k, 0, 10.0, f"p{k}") for k in range(5)]
        candidate = [rec(30 * k + 3, 0, 8.0, f"c{k}") for k in range(5)]
        base = recall_of(primary, candidate)
        for _ in range(3):
            p = [primary[i] for i in rng.permutation(5)]
            c = [candidate[i] for i in rng.permutation(5)]
            assert recall_of(p, c) == pytest.approx(base, rel=1e-12)


def _half_square(cx, cy, side):
    h = side / 2.0
    ring = np.asarray(
        [[cx - h, cy - h], [cx, cy - h], [cx, cy + h], [cx - h, cy + h], [cx - h, cy - h]]
    )
    lon, lat = FRAME.inverse(ring[:, 0], ring[:, 1])
    return np.column_stack([lon, lat])


class TestAreaGain:
    def test_subset_gains_nothing(self):
        primary = [rec(0, 0, 12.0, "a")]
        candidate = [rec(0, 0, 8.0, "c")]
        assert area_gain_of(primary, candidate) == pytest.approx(0.0, abs=1e-6)

    def test_disjoint_gains_full_area(self):
        primary = [rec(0, 0, 10.0, "a")]
        candidate = [rec(50, 0, 10.0, "c"), rec(80, 0, 8.0, "d")]
        expected = sum(polygon_area_m2(r.geometry) for r in candidate)
        assert area_gain_of(primary, candidate) == pytest.approx(expected, rel=1e-6)

    def test_half_overlap_gains_half(self):
        primary = [FootprintRecord("p", GeoPolygon(_half_square(0, 0, 10.0)), "osm")]
        candidate = [rec(0, 0, 10.0, "c")]
        expected = 0.5 * polygon_area_m2(candidate[0].geometry)
        assert area_gain_of(primary, candidate) == pytest.approx(expected, rel=0.01)

    def test_empty_candidate(self):
        assert area_gain_of([rec(0, 0)], []) == 0.0


class TestSelectSecondary:
    def test_single_candidate_wins(self):
        primary = [rec(0, 0, 10.0, "p")]
        winner = select_secondary_source(primary, {"microsoft": [rec(50, 0, 10.0, "m")]})
        assert winner.source == "microsoft"

    def test_tie_broken_by_source_order(self):
        primary = [rec(0, 0, 10.0, "p")]
        # candidate A: full recall, no gain; candidate B: zero recall, max gain
        cand_a = [rec(0, 0, 10.0, "a")]
        cand_b = [rec(60, 0, 10.0, "b")]
        winner = select_secondary_source(
            primary, {"microsoft": cand_a, "clsm": cand_b}
        )
        assert winner.combined == pytest.approx(0.5, abs=1e-9)
        assert winner.source == "microsoft"  # earlier in the fixed order

    def test_three_candidates_hand_computed(self):
        primary = [rec(0, 0, 10.0, "p")]  # area 100
        # microsoft: covers primary fully + adds disjoint 100 -> recall 1, gain 100
        ms = [rec(0, 0, 10.0, "m1"), rec(50, 0, 10.0, "m2")]
        # clsm: disjoint 400 -> recall 0, gain 400 (max)
        cl = [rec(100, 0, 20.0, "c1")]
        # open_buildings: covers primary only -> recall 1, gain 0
        ob = [rec(0, 0, 10.0, "o1")]
        winner = select_secondary_source(
            primary, {"microsoft": ms, "clsm": cl, "open_buildings": ob}
        )
        # scores: ob = 0.5, cl = 0.5, ms = 0.5 + 0.5*(100/400) = 0.625
        assert winner.source == "microsoft"
        assert winner.combined == pytest.approx(0.625, rel=1e-3)

    def test_all_zero_gain_defined(self):
        primary = [rec(0, 0, 10.0, "p")]
        winner = select_secondary_source(primary, {"microsoft": [rec(0, 0, 10.0, "m")]})
        assert winner.combined == pytest.approx(0.5, abs=1e-9)


class TestMerge:
    def test_empty_secondary_identity(self):
        primary = [rec(0, 0, 10.0, "a"), rec(30, 0, 10.0, "b")]
        assert merge(primary, []) == primary

    def test_duplicate_excluded(self):
        primary = [rec(0, 0, 10.0, "a")]
        secondary = [rec(0, 0, 10.0, "dup", source="microsoft")]
        assert merge(primary, secondary) == primary

    def test_small_overlap_included(self):
        primary = [rec(0, 0, 10.0, "a")]
        # 5% of the secondary's area overlaps the primary
        secondary = [rec(9.5, 0, 10.0, "s", source="microsoft")]
        out = merge(primary, secondary, overlap_thresh=0.1)
        assert [r.id for r in out] == ["a", "s"]

    def test_above_threshold_excluded(self):
        primary = [rec(0, 0, 10.0, "a")]
        # 15% of the secondary's area overlaps the primary
        secondary = [rec(8.5, 0, 10.0, "s", source="microsoft")]
        out = merge(primary, secondary, overlap_thresh=0.1)
        assert [r.id for r in out] == ["a"]

    def test_self_fusion_identity(self, town):
        primary = town.footprints
        assert merge(primary, primary) == primary

    def test_never_removes_primary(self, rng, town):
        primary = town.footprints[:20]
        secondary = town.footprints[10:]
        out = merge(primary, secondary)
        assert len(out) >= len(primary)
        assert out[: len(primary)] == primary


class TestFuseAdmin:
    def test_single_source_passthrough(self):
        records = [rec(0, 0, 10.0, "a"), rec(30, 0, 10.0, "b")]
        fused, report = fuse_admin(unit("EU"), {"osm": records})
        assert fused == records
        assert len(report) == 1
        assert report[0].source == "osm"
        assert report[0].count == 2

    def test_two_disjoint_sources_counts_add(self):
        osm = [rec(0, 0, 10.0, "a"), rec(30, 0, 10.0, "b")]
        ms = [rec(90, 0, 10.0, "m1", "microsoft"), rec(120, 0, 10.0, "m2", "microsoft")]
        fused, report = fuse_admin(unit("EU"), {"osm": osm, "microsoft": ms})
        assert len(fused) == 4
        counts = {c.source: c.count for c in report}
        assert counts == {"osm": 2, "microsoft": 2}

    def test_three_source_town_report_matches_provenance(self, rng, town):
        osm = town.footprints[:25]
        ms = [
            FootprintRecord(f"ms_{r.id}", r.geometry, "microsoft")
            for r in town.footprints[20:35]
        ]
        ob = [
            FootprintRecord(f"ob_{r.id}", r.geometry, "open_buildings")
            for r in town.footprints[30:]
        ]
        fused, report = fuse_admin(
            unit("EU", half=2000.0), {"osm": osm, "microsoft": ms, "open_buildings": ob}
        )
        tally = {}
        for r in fused:
            tally[r.source] = tally.get(r.source, 0) + 1
        assert {c.source: c.count for c in report} == tally
        assert sum(c.count for c in report) == len(fused)
        total_area = sum(polygon_area_m2(r.geometry) for r in fused)
        assert sum(c.area_m2 for c in report) == pytest.approx(total_area, rel=1e-3)

    def test_no_sources(self):
        fused, report = fuse_admin(unit(), {})
        assert fused == [] and report == []

    def test_clip_by_centroid(self):
        inside = rec(0, 0, 10.0, "in")
        outside = rec(5000, 0, 10.0, "out")
        clipped = clip_to_unit(unit("EU", half=500.0), [inside, outside])
        assert clipped == [inside]

    def test_sa_base_is_open_buildings(self):
        osm = [rec(0, 0, 10.0, "a")]
        ob = [rec(0, 0, 10.0, "o", "open_buildings")]
        fused, report = fuse_admin(unit("SA"), {"osm": osm, "open_buildings": ob})
        assert fused[0].source == "open_buildings"
