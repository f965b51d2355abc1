"""Building-footprint processing toolkit.

Mosaicking of prioritized scenes, probability-raster polygonization,
quality-guided multi-source footprint fusion, LoD1 prism generation with
uncertainty, the matching evaluation metrics, and the statistical analyses
built on top (volume gridding, count extrapolation, per-capita indicator
comparisons).
"""

from .errors import (
    FileFormatError,
    GridMismatch,
    InvalidCoordinate,
    InvalidGeometry,
    InvalidGrid,
    MissingInput,
    SemanticMismatch,
    UndefinedResult,
)
from .geometry import (
    FootprintRecord,
    GeoPolygon,
    LocalEqualArea,
    intersection_area_m2,
    iou,
    polygon_area_m2,
)
from .index import SpatialIndex
from .raster import GridSpec, RasterGrid, Semantic, dilate_mask, rasterize
from .tiling import TileId, tile_bounds, tile_of, select_tiles
from .mosaic import SceneEntry, filter_scenes, mosaic
from .polygonize import (
    SimplifyParams,
    filter_false_positives,
    regularize_mask,
    simplify,
    threshold_mask,
    trace_polygons,
)
from .fusion import (
    AdminUnit,
    FusionScore,
    area_gain_of,
    fuse_admin,
    merge,
    recall_of,
    select_base_source,
    select_secondary_source,
)
from .lod1 import Lod1Record, PredictionStack, assign_height, build_lod1, tta_aggregate
from .metrics import (
    EvalReport,
    MatchResult,
    ap50,
    ar50,
    completeness,
    evaluate,
    height_error,
    match_max_overlap,
    n_ratio,
    raster_iou,
    vector_iou,
    volume_error,
)
from .analytics import (
    RegionStats,
    RegressionResult,
    agreement_decomposition,
    estimate_global_count,
    grid_volume,
    loglog_regression,
    per_capita_indicators,
    ranking_agreement,
)

__version__ = "0.1.0"
