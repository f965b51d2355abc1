"""Quality-guided fusion of multi-source footprints per administrative unit.

For each admin unit a base (primary) source is chosen by continent, the best
complement (secondary) source is ranked by a combination of recall and area
gain, and the two are merged at the instance level: every primary building is
retained and secondary buildings are added only where they do not duplicate
primary coverage.

Recall here is the fraction of primary building area covered by a candidate
source; area gain is the new building area a candidate adds beyond primary
coverage. The combined score weighs recall and max-normalized area gain
equally; ties fall back to the fixed source order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from shapely.geometry import MultiPolygon, Polygon
from shapely.ops import unary_union

from .errors import UndefinedResult
from .geometry import (
    CONTINENTS,
    FootprintRecord,
    GeoPolygon,
    LocalEqualArea,
    SOURCE_OPEN_BUILDINGS,
    SOURCE_ORDER,
    SOURCE_OSM,
    source_rank,
)
from .index import SpatialIndex

DEFAULT_OVERLAP_THRESH = 0.1
#: Continents where the default base layer is Open Buildings instead of OSM.
OPEN_BUILDINGS_CONTINENTS = frozenset({"SA", "AF"})


@dataclass
class AdminUnit:
    """Fusion work unit: an administrative boundary with its continent."""

    admin_id: str
    parts: tuple[GeoPolygon, ...]
    continent: str

    def __post_init__(self):
        if self.continent not in CONTINENTS:
            raise ValueError(f"unknown continent {self.continent!r}")
        if isinstance(self.parts, GeoPolygon):
            self.parts = (self.parts,)
        else:
            self.parts = tuple(self.parts)
        if not self.parts:
            raise ValueError(f"admin unit {self.admin_id} has no geometry")

    def contains_point(self, lon: float, lat: float) -> bool:
        from .geometry import points_in_polygon

        return any(
            bool(points_in_polygon(p, np.asarray([lon]), np.asarray([lat]))[0])
            for p in self.parts
        )


@dataclass(frozen=True)
class FusionScore:
    source: str
    recall: float
    area_gain_m2: float
    combined: float


@dataclass
class SourceContribution:
    source: str
    count: int
    area_m2: float


def select_base_source(unit: AdminUnit, available: set[str]) -> str:
    """Continental base-layer rule with a fixed fallback order."""
    if not available:
        raise UndefinedResult("no sources available")
    if unit.continent in OPEN_BUILDINGS_CONTINENTS:
        if SOURCE_OPEN_BUILDINGS in available:
            return SOURCE_OPEN_BUILDINGS
    elif SOURCE_OSM in available:
        return SOURCE_OSM
    for source in SOURCE_ORDER:
        if source in available:
            return source
    return min(available, key=source_rank)


class _ProjectedSet:
    """Record list projected to a shared local frame, with a bbox index."""

    def __init__(self, records: Sequence[FootprintRecord], frame: LocalEqualArea):
        self.records = list(records)
        self.frame = frame
        self.polys = [r.geometry.projected(frame) for r in self.records]
        boxes = (
            np.asarray([p.bounds for p in self.polys], dtype=float)
            if self.polys
            else np.empty((0, 4))
        )
        self.index = SpatialIndex(boxes, list(range(len(self.polys))))

    def union_near(self, geom: Polygon):
        """Union of member polygons whose bbox meets ``geom``'s bbox."""
        hits = self.index.query(geom.bounds)
        if not hits:
            return None
        return unary_union([self.polys[i] for i in hits])


def _common_frame(record_sets: Sequence[Sequence[FootprintRecord]]) -> LocalEqualArea:
    boxes = [
        r.geometry.bounds for records in record_sets for r in records
    ]
    if not boxes:
        return LocalEqualArea(0.0, 0.0)
    arr = np.asarray(boxes, dtype=float)
    return LocalEqualArea(
        0.5 * float(arr[:, 0].min() + arr[:, 2].max()),
        0.5 * float(arr[:, 1].min() + arr[:, 3].max()),
    )


def recall_of(
    primary: Sequence[FootprintRecord],
    candidate: Sequence[FootprintRecord],
    frame: Optional[LocalEqualArea] = None,
) -> float:
    """Fraction of primary building area covered by the candidate source."""
    if not primary:
        raise UndefinedResult("recall is undefined for an empty primary set")
    if frame is None:
        frame = _common_frame([primary, candidate])
    cand = _ProjectedSet(candidate, frame)
    covered = 0.0
    total = 0.0
    for rec in primary:
        poly = rec.geometry.projected(frame)
        total += poly.area
        near = cand.union_near(poly)
        if near is not None:
            covered += poly.intersection(near).area
    if total <= 0.0:
        raise UndefinedResult("primary set has zero area")
    return min(covered / total, 1.0)


def area_gain_of(
    primary: Sequence[FootprintRecord],
    candidate: Sequence[FootprintRecord],
    frame: Optional[LocalEqualArea] = None,
) -> float:
    """New building area (m^2) the candidate adds beyond primary coverage."""
    if frame is None:
        frame = _common_frame([primary, candidate])
    prim = _ProjectedSet(primary, frame)
    gain = 0.0
    for rec in candidate:
        poly = rec.geometry.projected(frame)
        near = prim.union_near(poly)
        gain += poly.area if near is None else poly.difference(near).area
    return gain


def select_secondary_source(
    primary: Sequence[FootprintRecord],
    candidates: Mapping[str, Sequence[FootprintRecord]],
    frame: Optional[LocalEqualArea] = None,
) -> FusionScore:
    """Rank candidate sources by 0.5*recall + 0.5*normalized area gain."""
    if not candidates:
        raise UndefinedResult("no candidate sources")
    if frame is None:
        frame = _common_frame([primary, *candidates.values()])
    scores: dict[str, tuple[float, float]] = {}
    for source, records in candidates.items():
        recall = recall_of(primary, records, frame) if primary else 0.0
        gain = area_gain_of(primary, records, frame)
        scores[source] = (recall, gain)
    max_gain = max(g for _, g in scores.values())
    best: Optional[FusionScore] = None
    for source in sorted(scores, key=source_rank):
        recall, gain = scores[source]
        combined = 0.5 * recall + 0.5 * (gain / max_gain if max_gain > 0 else 0.0)
        if best is None or combined > best.combined:
            best = FusionScore(source, recall, gain, combined)
    return best


def merge(
    primary: Sequence[FootprintRecord],
    secondary: Sequence[FootprintRecord],
    overlap_thresh: float = DEFAULT_OVERLAP_THRESH,
    frame: Optional[LocalEqualArea] = None,
) -> list[FootprintRecord]:
    """Primary records plus secondary records that do not duplicate them.

    A secondary building is added iff the fraction of its own area already
    covered by the primary source stays below ``overlap_thresh``.
    """
    if frame is None:
        frame = _common_frame([primary, secondary])
    prim = _ProjectedSet(primary, frame)
    out = list(primary)
    for rec in secondary:
        poly = rec.geometry.projected(frame)
        near = prim.union_near(poly)
        if near is None:
            out.append(rec)
            continue
        area = poly.area
        if area <= 0.0:
            continue
        if poly.intersection(near).area / area < overlap_thresh:
            out.append(rec)
    return out


def clip_to_unit(
    unit: AdminUnit, records: Sequence[FootprintRecord]
) -> list[FootprintRecord]:
    """Records whose centroid falls inside the unit (no geometry splitting)."""
    kept = []
    for rec in records:
        lon, lat = rec.geometry.centroid
        if unit.contains_point(lon, lat):
            kept.append(rec)
    return kept


def fuse_admin(
    unit: AdminUnit,
    sources: Mapping[str, Sequence[FootprintRecord]],
    overlap_thresh: float = DEFAULT_OVERLAP_THRESH,
    clip: bool = True,
) -> tuple[list[FootprintRecord], list[SourceContribution]]:
    """Base selection, secondary ranking and merge for one admin unit.

    Returns the fused records plus the per-source contribution tally
    (building count and total area actually present in the fused output).
    With ``clip`` records are first reduced to those whose centroid lies in
    the unit.
    """
    from .geometry import polygon_area_m2

    clipped: dict[str, list[FootprintRecord]] = {}
    for source, records in sources.items():
        records = clip_to_unit(unit, records) if clip else list(records)
        if records:
            clipped[source] = records
    if not clipped:
        return [], []

    base = select_base_source(unit, set(clipped))
    primary = clipped[base]
    candidates = {s: r for s, r in clipped.items() if s != base}
    frame = _common_frame([primary, *candidates.values()])
    if candidates:
        winner = select_secondary_source(primary, candidates, frame)
        fused = merge(primary, clipped[winner.source], overlap_thresh, frame)
    else:
        fused = list(primary)

    tally: dict[str, SourceContribution] = {}
    for rec in fused:
        entry = tally.setdefault(rec.source, SourceContribution(rec.source, 0, 0.0))
        entry.count += 1
        entry.area_m2 += polygon_area_m2(rec.geometry)
    report = [tally[s] for s in sorted(tally, key=source_rank)]
    return fused, report
