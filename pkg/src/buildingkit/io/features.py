"""Newline-delimited feature records (one JSON feature object per line).

The interchange format for footprints, LoD1 models and admin boundaries.
Writers sort by record id and emit canonical JSON (sorted keys, compact
separators), so output bytes are reproducible regardless of producer
threading.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np

from ..errors import FileFormatError, InvalidGeometry
from ..fusion import AdminUnit
from ..geometry import FootprintRecord, GeoPolygon
from ..lod1 import Lod1Record


@dataclass
class RejectionReport:
    """Per-file tally of what the reader had to repair or drop."""

    path: str = ""
    n_read: int = 0
    n_valid: int = 0
    n_repaired: int = 0
    n_rejected: int = 0
    rejected_ids: list = field(default_factory=list)


def _rings_to_coordinates(geom: GeoPolygon) -> list:
    rings = [geom.exterior.tolist()]
    rings.extend(h.tolist() for h in geom.holes)
    return rings


def _geometry_to_json(geom: GeoPolygon) -> dict:
    return {"type": "Polygon", "coordinates": _rings_to_coordinates(geom)}


def _parse_polygon(coords) -> GeoPolygon:
    if not coords:
        raise InvalidGeometry("empty coordinate list")
    return GeoPolygon.repair(np.asarray(coords[0], float),
                             [np.asarray(r, float) for r in coords[1:]])


def _feature_line(id_, geometry: dict, properties: dict) -> str:
    clean = {k: v for k, v in properties.items() if v is not None}
    return json.dumps(
        {"type": "Feature", "id": id_, "geometry": geometry, "properties": clean},
        sort_keys=True,
        separators=(",", ":"),
    )


def write_footprints(
    records: Iterable[FootprintRecord], path, extra_properties: Optional[dict] = None
) -> None:
    lines = []
    for rec in records:
        props = {
            "source": rec.source,
            "height_m": rec.height_m,
            "admin_id": rec.admin_id,
        }
        if extra_properties:
            props.update(extra_properties)
        lines.append((str(rec.id), _feature_line(rec.id, _geometry_to_json(rec.geometry), props)))
    lines.sort(key=lambda t: t[0])
    Path(path).write_text("\n".join(line for _, line in lines) + ("\n" if lines else ""))


def write_lod1(records: Iterable[Lod1Record], path) -> None:
    lines = []
    for rec in records:
        props = {
            "source": rec.footprint.source,
            "admin_id": rec.footprint.admin_id,
            "height_m": rec.height_m,
            "uncertainty_m2": rec.uncertainty_m2,
            "volume_m3": rec.volume_m3,
            "height_valid": bool(rec.height_valid),
        }
        lines.append(
            (str(rec.id), _feature_line(rec.id, _geometry_to_json(rec.footprint.geometry), props))
        )
    lines.sort(key=lambda t: t[0])
    Path(path).write_text("\n".join(line for _, line in lines) + ("\n" if lines else ""))


def _iter_features(path) -> Iterator[dict]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError:
        raise
    stripped = text.lstrip()
    if stripped.startswith("{") and '"FeatureCollection"' in stripped[:200]:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"{path}: {exc}") from exc
        yield from doc.get("features", [])
        return
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            yield json.loads(line)
        except json.JSONDecodeError:
            yield {"_malformed_line": line_no}


def read_footprints(
    path,
    source: Optional[str] = None,
    report: Optional[RejectionReport] = None,
) -> Iterator[FootprintRecord]:
    """Lazily yield validated footprint records from a feature file.

    Self-intersecting geometries are repaired once (noted in the report);
    records that stay invalid or are malformed are skipped and counted.
    Accepts newline-delimited features or a single FeatureCollection.
    """
    if report is None:
        report = RejectionReport()
    report.path = str(path)
    for idx, feat in enumerate(_iter_features(path)):
        report.n_read += 1
        fid = feat.get("id", f"feature_{idx}")
        if "_malformed_line" in feat or feat.get("geometry") is None:
            report.n_rejected += 1
            report.rejected_ids.append(fid)
            continue
        props = feat.get("properties") or {}
        try:
            coords = feat["geometry"]["coordinates"]
            try:
                geom = GeoPolygon(
                    np.asarray(coords[0], float),
                    [np.asarray(r, float) for r in coords[1:]],
                )
            except InvalidGeometry:
                geom = _parse_polygon(coords)
                report.n_repaired += 1
        except (InvalidGeometry, KeyError, TypeError, ValueError, IndexError):
            report.n_rejected += 1
            report.rejected_ids.append(fid)
            continue
        height = props.get("height_m")
        record = FootprintRecord(
            id=str(fid),
            geometry=geom,
            source=source or props.get("source", "unknown"),
            height_m=None if height is None else float(height),
            admin_id=props.get("admin_id"),
        )
        report.n_valid += 1
        yield record


def load_footprints(path, source: Optional[str] = None):
    """Eager variant of :func:`read_footprints`: (records, report)."""
    report = RejectionReport()
    records = list(read_footprints(path, source, report))
    return records, report


def read_lod1(path) -> list[Lod1Record]:
    records = []
    for idx, feat in enumerate(_iter_features(path)):
        if "_malformed_line" in feat or feat.get("geometry") is None:
            continue
        props = feat.get("properties") or {}
        try:
            geom = _parse_polygon(feat["geometry"]["coordinates"])
        except (InvalidGeometry, KeyError, TypeError, ValueError):
            continue
        fp = FootprintRecord(
            id=str(feat.get("id", f"feature_{idx}")),
            geometry=geom,
            source=props.get("source", "unknown"),
            admin_id=props.get("admin_id"),
        )
        h = props.get("height_m")
        records.append(
            Lod1Record(
                footprint=fp,
                height_m=None if h is None else float(h),
                uncertainty_m2=props.get("uncertainty_m2"),
                volume_m3=props.get("volume_m3"),
                height_valid=bool(props.get("height_valid", h is not None and h >= 1.0)),
            )
        )
    return records


def read_admin_units(path) -> list[AdminUnit]:
    """Admin boundaries: Polygon or MultiPolygon features with a continent."""
    units = []
    for idx, feat in enumerate(_iter_features(path)):
        if "_malformed_line" in feat or feat.get("geometry") is None:
            continue
        props = feat.get("properties") or {}
        geom = feat["geometry"]
        if geom["type"] == "Polygon":
            parts = [_parse_polygon(geom["coordinates"])]
        elif geom["type"] == "MultiPolygon":
            parts = [_parse_polygon(c) for c in geom["coordinates"]]
        else:
            raise FileFormatError(f"{path}: admin geometry must be (Multi)Polygon")
        units.append(
            AdminUnit(
                admin_id=str(props.get("admin_id", feat.get("id", f"unit_{idx}"))),
                parts=tuple(parts),
                continent=props.get("continent", "EU"),
            )
        )
    return units


def write_admin_units(units: Iterable[AdminUnit], path) -> None:
    lines = []
    for unit in units:
        geometry = {
            "type": "MultiPolygon",
            "coordinates": [_rings_to_coordinates(p) for p in unit.parts],
        }
        props = {"admin_id": unit.admin_id, "continent": unit.continent}
        lines.append((unit.admin_id, _feature_line(unit.admin_id, geometry, props)))
    lines.sort(key=lambda t: t[0])
    Path(path).write_text("\n".join(line for _, line in lines) + ("\n" if lines else ""))
