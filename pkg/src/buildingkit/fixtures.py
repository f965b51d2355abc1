"""Deterministic synthetic towns for tests and demos.

Buildings are laid out on a jittered grid in a local meter frame (so they
never overlap), extruded with plausible heights, and mapped to lon/lat.
Derived inputs (probability rasters, height stacks, scenes, land cover,
per-source footprint subsets) mimic what the production stages consume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .geometry import (
    FootprintRecord,
    GeoPolygon,
    LocalEqualArea,
    SOURCE_MICROSOFT,
    SOURCE_OPEN_BUILDINGS,
    SOURCE_OSM,
    meters_per_degree,
    polygon_area_m2,
)
from .lod1 import Lod1Record
from .raster import GridSpec, RasterGrid, Semantic, rasterize

DEFAULT_CENTER = (11.5, 48.1)


@dataclass
class Town:
    """Ground truth for a synthetic settlement."""

    center: tuple[float, float]
    frame: LocalEqualArea
    extent_m: float
    records: list[Lod1Record]

    @property
    def footprints(self) -> list[FootprintRecord]:
        return [r.footprint for r in self.records]


def _rect_ring(cx, cy, w, h, angle_rad) -> np.ndarray:
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    corners = np.asarray(
        [[-w / 2, -h / 2], [w / 2, -h / 2], [w / 2, h / 2], [-w / 2, h / 2]]
    )
    rot = corners @ np.asarray([[c, s], [-s, c]])
    ring = rot + [cx, cy]
    return np.vstack([ring, ring[:1]])


def make_town(
    rng: np.random.Generator,
    n_buildings: int = 40,
    center: tuple[float, float] = DEFAULT_CENTER,
    spacing_m: float = 24.0,
    min_size_m: float = 8.0,
    max_size_m: float = 16.0,
    rotated_fraction: float = 0.3,
    id_prefix: str = "gt",
) -> Town:
    """Non-overlapping rectangular buildings with heights, in lon/lat."""
    frame = LocalEqualArea(*center)
    n_side = int(math.ceil(math.sqrt(n_buildings)))
    extent = n_side * spacing_m
    cells = [(i, j) for i in range(n_side) for j in range(n_side)]
    rng.shuffle(cells)
    records = []
    for k, (i, j) in enumerate(cells[:n_buildings]):
        cx = (i + 0.5) * spacing_m - extent / 2
        cy = (j + 0.5) * spacing_m - extent / 2
        w = rng.uniform(min_size_m, max_size_m)
        h = rng.uniform(min_size_m, max_size_m)
        # jitter, bounded so neighbors never touch
        margin = (spacing_m - max(w, h) * 1.5) / 2
        if margin > 0:
            cx += rng.uniform(-margin, margin)
            cy += rng.uniform(-margin, margin)
        angle = rng.uniform(0, math.pi / 6) if rng.random() < rotated_fraction else 0.0
        ring = _rect_ring(cx, cy, w, h, angle)
        lon, lat = frame.inverse(ring[:, 0], ring[:, 1])
        geom = GeoPolygon(np.column_stack([lon, lat]))
        height = float(np.round(rng.lognormal(mean=1.8, sigma=0.5), 2))
        fp = FootprintRecord(f"{id_prefix}_{k:04d}", geom, "reference", height_m=height)
        volume = polygon_area_m2(geom) * height
        records.append(Lod1Record(fp, height, 0.0, volume, height_valid=height >= 1.0))
    return Town(center, frame, extent, records)


def perturbed_product(
    rng: np.random.Generator,
    town: Town,
    source: str,
    keep_fraction: float = 0.8,
    jitter_m: float = 0.8,
    height_noise_m: float = 1.0,
    n_false_positives: int = 0,
    id_prefix: Optional[str] = None,
) -> list[Lod1Record]:
    """A noisy derived product: subset of the town plus optional spurious boxes."""
    prefix = id_prefix or source
    out = []
    keep = rng.random(len(town.records)) < keep_fraction
    for k, (rec, kept) in enumerate(zip(town.records, keep)):
        if not kept:
            continue
        ring = town.frame.project_ring(rec.footprint.geometry.exterior)
        noisy = ring[:-1] + rng.uniform(-jitter_m, jitter_m, size=(len(ring) - 1, 2))
        lon, lat = town.frame.inverse(noisy[:, 0], noisy[:, 1])
        try:
            geom = GeoPolygon.repair(np.column_stack([lon, lat]))
        except Exception:
            continue
        height = None
        if rec.height_m is not None:
            height = max(float(rec.height_m + rng.normal(0, height_noise_m)), 0.0)
        fp = FootprintRecord(f"{prefix}_{k:04d}", geom, source, height_m=height)
        vol = polygon_area_m2(geom) * height if height is not None else None
        out.append(Lod1Record(fp, height, None, vol, height_valid=bool(height and height >= 1.0)))
    half = town.extent_m / 2
    for k in range(n_false_positives):
        cx = rng.uniform(-half, half)
        cy = rng.uniform(half + 30.0, half + 80.0)  # strip just north of town
        ring = _rect_ring(cx, cy, 10.0, 10.0, 0.0)
        lon, lat = town.frame.inverse(ring[:, 0], ring[:, 1])
        fp = FootprintRecord(
            f"{prefix}_fp_{k:04d}",
            GeoPolygon(np.column_stack([lon, lat])),
            source,
            height_m=None,
        )
        out.append(Lod1Record(fp, None, None, None))
    return out


def town_grid_spec(town: Town, resolution_m: float, pad_m: float = 30.0) -> GridSpec:
    """Degree-unit grid covering the town at ~resolution_m pixels."""
    mx, my = meters_per_degree(town.center[1])
    dlon = resolution_m / mx
    dlat = resolution_m / my
    half = town.extent_m / 2 + pad_m
    lon0 = town.center[0] - half / mx
    lat1 = town.center[1] + half / my
    n = int(math.ceil(2 * half / resolution_m))
    return GridSpec((lon0, lat1), (dlon, dlat), n, n, "deg")


def gt_mask(town: Town, spec: GridSpec) -> RasterGrid:
    return rasterize(town.footprints, spec)


def probability_raster(
    rng: np.random.Generator, town: Town, resolution_m: float = 3.0
) -> RasterGrid:
    """Blurred, noisy pseudo-probabilities that threshold back to the town."""
    spec = town_grid_spec(town, resolution_m)
    mask = gt_mask(town, spec).values.astype(float)
    soft = ndimage.gaussian_filter(mask, sigma=0.7)
    noise = rng.normal(0.0, 0.05, size=soft.shape)
    prob = np.clip(0.12 + 0.78 * soft + noise, 0.0, 1.0)
    return RasterGrid(spec.origin, spec.pixel_size, prob, None, Semantic.PROBABILITY, "deg")


def height_layers(
    rng: np.random.Generator,
    town: Town,
    resolution_m: float = 3.0,
    n_layers: int = 4,
    noise_m: float = 0.6,
    nodata: float = -9999.0,
) -> list[RasterGrid]:
    """Sliding-window style height predictions with staggered coverage."""
    spec = town_grid_spec(town, resolution_m)
    heights = rasterize(
        town.footprints,
        spec,
        values=[r.height_m or 0.0 for r in town.records],
        semantic=Semantic.HEIGHT_M,
    ).values
    layers = []
    h, w = heights.shape
    for k in range(n_layers):
        vals = heights + rng.normal(0.0, noise_m, size=heights.shape)
        vals[heights == 0] *= 0.25
        vals = vals.clip(min=0.0)
        out = np.full_like(vals, nodata)
        # stagger window coverage: each layer misses one border strip
        margin = max(h // 8, 1)
        if k % 4 == 0:
            out[margin:, :] = vals[margin:, :]
        elif k % 4 == 1:
            out[:, margin:] = vals[:, margin:]
        elif k % 4 == 2:
            out[: h - margin, :] = vals[: h - margin, :]
        else:
            out[:, : w - margin] = vals[:, : w - margin]
        layers.append(
            RasterGrid(spec.origin, spec.pixel_size, out, nodata, Semantic.HEIGHT_M, "deg")
        )
    return layers


def landcover_builtup(town: Town, resolution_m: float = 10.0) -> RasterGrid:
    """Coarse built-up mask: the town footprint dilated by a few pixels."""
    spec = town_grid_spec(town, resolution_m, pad_m=400.0)
    mask = gt_mask(town, spec).values.astype(bool)
    grown = ndimage.binary_dilation(mask, iterations=3)
    return RasterGrid(spec.origin, spec.pixel_size, grown.astype(np.uint8), None,
                      Semantic.BINARY_MASK, "deg")


def scene_split(
    rng: np.random.Generator,
    prob: RasterGrid,
    nodata: float = -9999.0,
) -> list[dict]:
    """Cut a raster into overlapping scenes with usable masks and metadata.

    Three 2019 scenes (left band, right band, full frame with a cloudy bite)
    plus one over-threshold scene that the cloud filter must drop; together
    the usable scenes tile the full frame, so the mosaic reproduces it.
    """
    h, w = prob.values.shape
    cut = w // 2
    overlap = max(w // 10, 2)

    def scene(scene_id, col0, col1, cloud, year, chew=None):
        usable = np.zeros((h, w), dtype=np.uint8)
        usable[:, col0:col1] = 1
        if chew is not None:
            usable[chew] = 0
        values = np.where(usable == 1, prob.values, nodata)
        return {
            "scene_id": scene_id,
            "values": RasterGrid(prob.origin, prob.pixel_size, values, nodata,
                                 Semantic.PROBABILITY, prob.units),
            "mask": RasterGrid(prob.origin, prob.pixel_size, usable, None,
                               Semantic.BINARY_MASK, prob.units),
            "cloud_fraction": cloud,
            "year": year,
        }

    bite = np.zeros((h, w), dtype=bool)
    bite[: h // 6, : w // 6] = True
    return [
        scene("scene_a", 0, cut + overlap, 0.02, 2019),
        scene("scene_b", cut - overlap, w, 0.05, 2019, chew=bite),
        scene("scene_cloudy", 0, w, 0.35, 2019),
        scene("scene_old", 0, w, 0.01, 2018),
    ]


def write_demo_city(out_dir, seed: int = 7, n_buildings: int = 48) -> dict:
    """Materialize a full pipeline input set under ``out_dir``.

    Returns a dict of the paths written, including the ready-to-run config.
    """
    from .io import features as fio
    from .io.geotiff import write_geotiff

    out = Path(out_dir)
    (out / "sources").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    town = make_town(rng, n_buildings=n_buildings)

    gt_path = out / "gt.jsonl"
    fio.write_lod1(town.records, gt_path)

    by_source = {
        SOURCE_OSM: perturbed_product(rng, town, SOURCE_OSM, 0.75, 0.6),
        SOURCE_MICROSOFT: perturbed_product(
            rng, town, SOURCE_MICROSOFT, 0.55, 1.0, n_false_positives=2
        ),
        SOURCE_OPEN_BUILDINGS: perturbed_product(rng, town, SOURCE_OPEN_BUILDINGS, 0.7, 0.9),
    }
    source_paths = {}
    for source, records in by_source.items():
        p = out / "sources" / f"{source}.jsonl"
        fio.write_footprints([r.footprint for r in records], p)
        source_paths[source] = p

    prob = probability_raster(rng, town)
    scenes = scene_split(rng, prob)
    scene_rows = []
    for sc in scenes:
        rpath = out / f"{sc['scene_id']}.tif"
        mpath = out / f"{sc['scene_id']}_mask.tif"
        write_geotiff(rpath, sc["values"])
        write_geotiff(mpath, sc["mask"])
        scene_rows.append(
            f"{sc['scene_id']},{sc['cloud_fraction']},{sc['year']},{rpath.name},{mpath.name}"
        )
    scenes_csv = out / "scenes.csv"
    scenes_csv.write_text(
        "scene_id,cloud_fraction,year,path,mask_path\n" + "\n".join(scene_rows) + "\n"
    )

    layers = height_layers(rng, town)
    layer_paths = []
    for i, layer in enumerate(layers):
        p = out / f"height_{i}.tif"
        write_geotiff(p, layer)
        layer_paths.append(p.name)

    lc = landcover_builtup(town)
    lc_path = out / "landcover.tif"
    write_geotiff(lc_path, lc)

    # one admin unit covering the whole town
    half = town.extent_m / 2 + 200.0
    ring = _rect_ring(0.0, 0.0, 2 * half, 2 * half, 0.0)
    lon, lat = town.frame.inverse(ring[:, 0], ring[:, 1])
    unit_geom = GeoPolygon(np.column_stack([lon, lat]))
    from .fusion import AdminUnit

    admin_path = out / "admin.jsonl"
    fio.write_admin_units([AdminUnit("demo_city", (unit_geom,), "EU")], admin_path)

    config_path = out / "demo.yaml"
    config_path.write_text(
        "\n".join(
            [
                "scenes:",
                "  table: scenes.csv",
                "sources:",
                *[f"  {s}: sources/{s}.jsonl" for s in sorted(source_paths)],
                "admin:",
                "  boundaries: admin.jsonl",
                "rasters:",
                "  height_layers: [" + ", ".join(layer_paths) + "]",
                "  landcover_builtup: landcover.tif",
                "thresholds:",
                "  cloud: 0.10",
                "  probability: 0.5",
                "  overlap: 0.1",
                "  min_height: 1.0",
                "  dilation_m: 250.0",
                "years:",
                "  primary: 2019",
                "  fallback: 2018",
                "simplify:",
                "  tolerance_m: 3.0",
                "  min_area_m2: 20.0",
                "  min_ring_vertices: 4",
                "evaluation:",
                "  ground_truth: gt.jsonl",
                "  volume_cell_m: 10.0",
                "",
            ]
        )
    )
    return {
        "config": config_path,
        "ground_truth": gt_path,
        "sources": source_paths,
        "scenes_table": scenes_csv,
        "landcover": lc_path,
        "admin": admin_path,
        "town": town,
    }
