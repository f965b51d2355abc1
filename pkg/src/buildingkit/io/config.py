"""Pipeline configuration: one YAML file with a section per stage."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from ..errors import MissingInput


@dataclass
class Thresholds:
    cloud: float = 0.10
    probability: float = 0.5
    overlap: float = 0.1
    min_height: float = 1.0
    dilation_m: float = 250.0

    def validate(self):
        if not (0.0 <= self.cloud <= 1.0):
            raise ValueError(f"cloud threshold {self.cloud} outside [0, 1]")
        if not (0.0 < self.probability < 1.0):
            raise ValueError(f"probability threshold {self.probability} outside (0, 1)")
        if not (0.0 <= self.overlap <= 1.0):
            raise ValueError(f"overlap threshold {self.overlap} outside [0, 1]")
        if self.min_height < 0:
            raise ValueError("min_height must be >= 0")
        if self.dilation_m < 0:
            raise ValueError("dilation_m must be >= 0")


@dataclass
class SimplifySection:
    tolerance_m: float = 3.0
    min_area_m2: float = 20.0
    min_ring_vertices: int = 4


@dataclass
class PipelineConfig:
    base_dir: Path
    sources: dict[str, Path] = field(default_factory=dict)
    scenes_table: Optional[Path] = None
    probability_raster: Optional[Path] = None
    height_layers: list[Path] = field(default_factory=list)
    landcover_builtup: Optional[Path] = None
    admin_boundaries: Optional[Path] = None
    ground_truth: Optional[Path] = None
    thresholds: Thresholds = field(default_factory=Thresholds)
    simplify: SimplifySection = field(default_factory=SimplifySection)
    primary_year: int = 2019
    fallback_year: int = 2018
    volume_cell_m: float = 10.0
    tile: Optional[str] = None

    def validate(self) -> "PipelineConfig":
        self.thresholds.validate()
        if self.simplify.tolerance_m < 0 or self.simplify.min_area_m2 < 0:
            raise ValueError("simplify parameters must be >= 0")
        for label, path in self.existing_paths():
            if path is not None and not Path(path).exists():
                raise MissingInput(f"{label}: {path} does not exist")
        return self

    def existing_paths(self):
        yield from ((f"sources.{k}", v) for k, v in self.sources.items())
        yield ("scenes.table", self.scenes_table)
        yield ("rasters.probability", self.probability_raster)
        yield from (
            (f"rasters.height_layers[{i}]", p) for i, p in enumerate(self.height_layers)
        )
        yield ("rasters.landcover_builtup", self.landcover_builtup)
        yield ("admin.boundaries", self.admin_boundaries)
        yield ("evaluation.ground_truth", self.ground_truth)


def _resolve(base: Path, value) -> Optional[Path]:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_config(path) -> PipelineConfig:
    """Read and validate a pipeline configuration file."""
    path = Path(path)
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    base = path.parent
    thresholds = Thresholds(**(doc.get("thresholds") or {}))
    simplify = SimplifySection(**(doc.get("simplify") or {}))
    rasters = doc.get("rasters") or {}
    scenes = doc.get("scenes") or {}
    years = doc.get("years") or {}
    evaluation = doc.get("evaluation") or {}
    cfg = PipelineConfig(
        base_dir=base,
        sources={
            k: _resolve(base, v) for k, v in (doc.get("sources") or {}).items()
        },
        scenes_table=_resolve(base, scenes.get("table")),
        probability_raster=_resolve(base, rasters.get("probability")),
        height_layers=[_resolve(base, p) for p in rasters.get("height_layers") or []],
        landcover_builtup=_resolve(base, rasters.get("landcover_builtup")),
        admin_boundaries=_resolve(base, (doc.get("admin") or {}).get("boundaries")),
        ground_truth=_resolve(base, evaluation.get("ground_truth")),
        thresholds=thresholds,
        simplify=simplify,
        primary_year=int(years.get("primary", 2019)),
        fallback_year=int(years.get("fallback", 2018)),
        volume_cell_m=float(evaluation.get("volume_cell_m", 10.0)),
        tile=doc.get("tile"),
    )
    return cfg.validate()


def default_threads() -> int:
    """Worker count default: GBA_THREADS env var, else 1."""
    value = os.environ.get("GBA_THREADS")
    if value is None:
        return 1
    try:
        return max(int(value), 1)
    except ValueError:
        return 1
