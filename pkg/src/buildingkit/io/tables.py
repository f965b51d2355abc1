"""CSV adapters: scene metadata, analytics inputs and report writers."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from ..analytics import AgreementRow, RegionStats
from ..errors import FileFormatError, MissingInput
from ..fusion import SourceContribution
from ..metrics import EvalReport

GLOBAL_KEY = "GLOBAL"


def _read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise FileFormatError(f"{path}: empty CSV")
        return [row for row in reader]


def read_scene_table(path) -> list[dict]:
    """Rows of scene_id, cloud_fraction, year, path, mask_path."""
    rows = _read_rows(path)
    required = {"scene_id", "cloud_fraction", "year", "path", "mask_path"}
    missing = required - set(rows[0].keys() if rows else required)
    if missing:
        raise FileFormatError(f"{path}: missing columns {sorted(missing)}")
    for row in rows:
        row["cloud_fraction"] = float(row["cloud_fraction"])
        row["year"] = int(row["year"])
    return rows


def read_keyed_column(path, key_col: str, value_col: str) -> dict[str, float]:
    out: dict[str, float] = {}
    for row in _read_rows(path):
        try:
            out[row[key_col].strip()] = float(row[value_col])
        except (KeyError, ValueError) as exc:
            raise FileFormatError(f"{path}: bad row {row}") from exc
    return out


def read_continental_counts(path) -> dict[str, float]:
    return read_keyed_column(path, "continent", "count")


def read_continental_ratios(path) -> tuple[dict[str, float], Optional[float]]:
    """Per-continent ratios plus the optional GLOBAL average row."""
    ratios = read_keyed_column(path, "continent", "ratio")
    global_avg = ratios.pop(GLOBAL_KEY, None)
    return ratios, global_avg


def read_region_stats(path) -> list[RegionStats]:
    """Region table: region_id, building_count, area_m2, volume_m3[, population, gdp_per_capita]."""
    rows = _read_rows(path)
    out = []
    for row in rows:
        try:
            out.append(
                RegionStats(
                    region_id=row["region_id"].strip(),
                    building_count=int(float(row.get("building_count", 0) or 0)),
                    total_area_m2=float(row.get("area_m2", 0) or 0),
                    total_volume_m3=float(row.get("volume_m3", 0) or 0),
                    population=_opt_float(row.get("population")),
                    gdp_per_capita=_opt_float(row.get("gdp_per_capita")),
                )
            )
        except (KeyError, ValueError) as exc:
            raise FileFormatError(f"{path}: bad row {row}") from exc
    return out


def _opt_float(value) -> Optional[float]:
    if value is None or value == "":
        return None
    return float(value)


def _write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else v for v in row])


def write_contributions(path, rows: Mapping[str, Sequence[SourceContribution]]) -> None:
    """Per-admin-unit fusion contribution report."""
    flat = [
        (admin_id, c.source, c.count, repr(c.area_m2))
        for admin_id in sorted(rows)
        for c in rows[admin_id]
    ]
    _write_csv(path, ["admin_id", "source", "count", "area_m2"], flat)


def write_eval_report(path, reports: Mapping[tuple[str, str], EvalReport]) -> None:
    """One row per (city, product)."""
    header = ["city", "product"] + EvalReport.columns()
    rows = []
    for (city, product) in sorted(reports):
        rep = reports[(city, product)]
        rows.append([city, product] + [_fmt(v) for v in rep.as_row()])
    _write_csv(path, header, rows)


def write_agreement_rows(path, rows: Sequence[AgreementRow], n_pairs: int) -> None:
    _write_csv(
        path,
        ["indicator", "both_correct", "only_this_correct", "total_correct",
         "rate", "n_pairs"],
        [
            (r.indicator, r.both_correct, r.only_this_correct, r.total_correct,
             _fmt(r.rate), n_pairs)
            for r in rows
        ],
    )


def write_lod1_table(path, records) -> None:
    """Flat analytics table: id, height, variance, volume."""
    rows = [
        (
            str(r.id),
            _fmt(r.height_m),
            _fmt(r.uncertainty_m2),
            _fmt(r.volume_m3),
            int(r.height_valid),
        )
        for r in records
    ]
    rows.sort(key=lambda t: t[0])
    _write_csv(
        path, ["id", "height_m", "uncertainty_m2", "volume_m3", "height_valid"], rows
    )


def _fmt(value) -> Optional[str]:
    if value is None:
        return None
    return repr(float(value))
