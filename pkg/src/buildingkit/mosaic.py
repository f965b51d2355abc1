"""Scene filtering and usability-prioritized mosaicking.

Scenes carry a per-pixel usable mask (1 = usable). Each mosaic pixel takes
the value of the usable scene with the lowest priority number; where no scene
is usable the output is nodata.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import GridMismatch
from .raster import GridSpec, RasterGrid, Semantic, resample_nearest

DEFAULT_MAX_CLOUD = 0.10
DEFAULT_PRIMARY_YEAR = 2019
DEFAULT_FALLBACK_YEAR = 2018


@dataclass
class SceneEntry:
    """One acquisition over a tile, with its usability mask and metadata."""

    scene_id: str
    raster: RasterGrid
    usable_mask: RasterGrid
    cloud_fraction: float
    acquisition_year: int
    priority: Optional[int] = None

    def __post_init__(self):
        self.usable_mask.require_semantic(Semantic.BINARY_MASK)
        if not self.raster.same_geometry(self.usable_mask):
            raise GridMismatch(
                f"scene {self.scene_id}: raster and usable mask grids differ"
            )
        if not (0.0 <= self.cloud_fraction <= 1.0):
            raise ValueError(f"scene {self.scene_id}: cloud_fraction outside [0, 1]")


def clearest_first(scene: SceneEntry):
    """Default ordering: least cloud first, then most recent acquisition."""
    return (scene.cloud_fraction, -scene.acquisition_year, scene.scene_id)


def assign_priorities(
    scenes: Sequence[SceneEntry],
    key: Callable[[SceneEntry], object] = clearest_first,
) -> list[SceneEntry]:
    """Fill in ``priority`` (0 = preferred) for scenes that lack one."""
    ranked = sorted(scenes, key=key)
    for rank, scene in enumerate(ranked):
        if scene.priority is None:
            scene.priority = rank
    return list(scenes)


def filter_scenes(
    scenes: Sequence[SceneEntry],
    max_cloud: float = DEFAULT_MAX_CLOUD,
    primary_year: int = DEFAULT_PRIMARY_YEAR,
    fallback_year: int = DEFAULT_FALLBACK_YEAR,
) -> list[SceneEntry]:
    """Cloud-filtered scene selection with a fallback year.

    Keeps primary-year scenes under the cloud threshold; only if none
    survive, keeps fallback-year scenes under the same threshold.
    """
    primary = [
        s
        for s in scenes
        if s.acquisition_year == primary_year and s.cloud_fraction < max_cloud
    ]
    if primary:
        return primary
    return [
        s
        for s in scenes
        if s.acquisition_year == fallback_year and s.cloud_fraction < max_cloud
    ]


def mosaic(
    scenes: Sequence[SceneEntry],
    target: GridSpec,
    nodata: float = -9999.0,
    semantic: Optional[Semantic] = None,
) -> RasterGrid:
    """Per-pixel best-scene composite onto the target grid.

    Scenes are resampled to the target geometry (nearest neighbor). The
    result is deterministic given priorities and, with distinct priorities,
    invariant under permutation of the scene list. An empty scene list yields
    an all-nodata raster.
    """
    if semantic is None:
        semantic = scenes[0].raster.semantic if scenes else Semantic.REFLECTANCE
    out = np.full((target.height, target.width), nodata, dtype=float)
    if scenes:
        if any(s.priority is None for s in scenes):
            raise ValueError("all scenes need a priority; see assign_priorities()")
        # paint worst-first so the lowest priority number lands on top
        for scene in sorted(scenes, key=lambda s: (-s.priority, s.scene_id)):
            values = resample_nearest(scene.raster, target, fill=nodata).values
            usable = resample_nearest(scene.usable_mask, target, fill=0).values
            paint = usable == 1
            out[paint] = values[paint]
    return RasterGrid(target.origin, target.pixel_size, out, nodata, semantic, target.units)
