"""The global 0.2-degree processing grid."""

from __future__ import annotations

from typing import Iterable, NamedTuple

import numpy as np

from .errors import InvalidCoordinate
from .raster import RasterGrid, Semantic

TILE_DEG = 0.2
_IX_MAX = 900   # 180 / 0.2
_IY_MAX = 450   # 90 / 0.2


class TileId(NamedTuple):
    """Cell [ix*0.2, (ix+1)*0.2] x [iy*0.2, (iy+1)*0.2] degrees."""

    ix: int
    iy: int

    def __str__(self) -> str:
        return f"{self.ix}_{self.iy}"

    @classmethod
    def parse(cls, text: str) -> "TileId":
        ix, iy = (int(part) for part in text.replace(",", "_").split("_"))
        return cls(ix, iy)


def tile_of(lon: float, lat: float) -> TileId:
    """Tile containing a point; edges belong to the tile they open."""
    if not (-180.0 <= lon < 180.0) or not (-90.0 <= lat < 90.0):
        raise InvalidCoordinate(f"({lon}, {lat}) outside [-180,180) x [-90,90)")

    def cell(value: float) -> int:
        i = int(np.floor(value / TILE_DEG))
        # align floating floor with the float-evaluated cell edges i * 0.2
        if i * TILE_DEG > value:
            i -= 1
        elif (i + 1) * TILE_DEG <= value:
            i += 1
        return i

    return TileId(min(cell(lon), _IX_MAX - 1), min(cell(lat), _IY_MAX - 1))


def tile_bounds(tile: TileId) -> tuple[float, float, float, float]:
    """(lon_min, lat_min, lon_max, lat_max) in degrees."""
    if not (-_IX_MAX <= tile.ix < _IX_MAX) or not (-_IY_MAX <= tile.iy < _IY_MAX):
        raise InvalidCoordinate(f"tile index {tile} out of range")
    return (
        tile.ix * TILE_DEG,
        tile.iy * TILE_DEG,
        (tile.ix + 1) * TILE_DEG,
        (tile.iy + 1) * TILE_DEG,
    )


def select_tiles(builtup: RasterGrid, candidates: Iterable[TileId]) -> list[TileId]:
    """Tiles whose bounds contain at least one set pixel center.

    The built-up mask must be a lon/lat (degree-unit) raster.
    """
    builtup.require_semantic(Semantic.BINARY_MASK)
    rows, cols = np.nonzero(builtup.values == 1)
    if len(rows) == 0:
        return []
    xs = builtup.x_centers()[cols]
    ys = builtup.y_centers()[rows]
    hit: set[TileId] = set()
    for lon, lat in zip(xs, ys):
        hit.add(tile_of(float(lon), float(lat)))
    return sorted(t for t in candidates if t in hit)
