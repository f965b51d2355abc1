"""Statistical analyses over building stocks.

Volume gridding, the continental count extrapolation, log-log population
regressions and the ranking-agreement comparison of per-capita indicators.
All functions are pure and operate on in-memory tables.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import stats

from .errors import MissingInput, UndefinedResult
from .geometry import LocalEqualArea
from .lod1 import Lod1Record
from .raster import GridSpec, RasterGrid, Semantic

DEFAULT_VOLUME_CELL_M = 480.0
CONTINENT_KEYS = ("AS", "AF", "EU", "NA", "SA", "OC")


@dataclass
class RegionStats:
    region_id: str
    building_count: int
    total_area_m2: float
    total_volume_m3: float
    population: Optional[float] = None
    gdp_per_capita: Optional[float] = None

    def __post_init__(self):
        if self.building_count < 0 or self.total_area_m2 < 0 or self.total_volume_m3 < 0:
            raise ValueError(f"region {self.region_id}: negative totals")


@dataclass
class RegressionResult:
    slope: float
    intercept: float
    pearson_r: float
    spearman_rho: float
    n: int
    n_excluded: int = 0


def grid_volume(
    records: Sequence[Lod1Record],
    cell_m: float = DEFAULT_VOLUME_CELL_M,
    frame: Optional[LocalEqualArea] = None,
) -> RasterGrid:
    """Sum building volumes onto a square grid by footprint centroid.

    Attribution is by centroid cell, so the cell sums add up exactly to the
    total volume of the input records.
    """
    with_volume = [r for r in records if r.volume_m3 is not None]
    if not with_volume:
        return RasterGrid((0.0, cell_m), (cell_m, cell_m), np.zeros((1, 1)), None,
                          Semantic.VOLUME_M3, "m")
    cents = np.asarray([r.footprint.geometry.centroid for r in with_volume])
    if frame is None:
        frame = LocalEqualArea(float(np.mean(cents[:, 0])), float(np.mean(cents[:, 1])))
    x, y = frame.forward(cents[:, 0], cents[:, 1])
    col = np.floor(x / cell_m).astype(int)
    row = np.floor(y / cell_m).astype(int)
    c0, r0 = col.min(), row.min()
    shape = (int(row.max() - r0 + 1), int(col.max() - c0 + 1))
    vol = np.zeros(shape)
    np.add.at(vol, (row.max() - row, col - c0), [r.volume_m3 for r in with_volume])
    origin = (float(c0 * cell_m), float((row.max() + 1) * cell_m))
    return RasterGrid(origin, (cell_m, cell_m), vol, None, Semantic.VOLUME_M3, "m")


def estimate_global_count(
    counts: Mapping[str, float],
    n_ratios: Mapping[str, float],
    global_avg_ratio: Optional[float] = None,
) -> tuple[float, float, float]:
    """(point, low, high) global building-count extrapolation.

    Each continent's detected count is divided by its count ratio. Continents
    without a ratio (Africa in practice) use, respectively: the global
    average ratio for the point estimate, the maximum known ratio for the low
    bound and the minimum known ratio for the high bound. When no explicit
    global average is given, the mean of the known ratios is used.
    """
    if not counts:
        raise MissingInput("no continental counts")
    known = {c: r for c, r in n_ratios.items() if r is not None}
    if any(r <= 0 for r in known.values()):
        raise MissingInput("count ratios must be positive")
    missing = [c for c in counts if c not in known]
    if missing and not known:
        raise MissingInput("no ratios available to extrapolate from")
    base = sum(counts[c] / known[c] for c in counts if c in known)

    def with_policy(ratio: float) -> float:
        return base + sum(counts[c] / ratio for c in missing)

    avg = global_avg_ratio if global_avg_ratio is not None else float(
        np.mean(list(known.values()))
    )
    point = with_policy(avg)
    low = with_policy(max(known.values()))
    high = with_policy(min(known.values()))
    return (point, low, high)


def loglog_regression(x: Sequence[float], y: Sequence[float]) -> RegressionResult:
    """Least squares on (ln x, ln y) with correlation diagnostics.

    Pairs with a non-positive value on either side are excluded (and
    counted). Pearson r is computed on the log-transformed pairs, Spearman
    rho on the raw ranks with mean-rank ties.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise UndefinedResult("series lengths differ")
    ok = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    n_excluded = int(len(x) - ok.sum())
    x, y = x[ok], y[ok]
    if len(x) < 2:
        raise UndefinedResult("need at least two positive pairs")
    lx, ly = np.log(x), np.log(y)
    dx = lx - lx.mean()
    dy = ly - ly.mean()
    sxx = float(np.sum(dx * dx))
    syy = float(np.sum(dy * dy))
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedResult("degenerate variance in log space")
    slope = float(np.sum(dx * dy) / sxx)
    intercept = float(ly.mean() - slope * lx.mean())
    pearson = float(np.sum(dx * dy) / np.sqrt(sxx * syy))
    rho = float(stats.spearmanr(x, y).statistic)
    return RegressionResult(slope, intercept, pearson, rho, int(len(x)), n_excluded)


def per_capita_indicators(
    regions: Sequence[RegionStats],
) -> tuple[list[tuple[str, float, float]], list[str]]:
    """(region, volume m^3/person, area m^2/person) rows.

    Regions without a positive population are excluded and returned
    separately.
    """
    rows = []
    excluded = []
    for reg in regions:
        if reg.population is None or reg.population <= 0:
            excluded.append(reg.region_id)
            continue
        rows.append(
            (
                reg.region_id,
                reg.total_volume_m3 / reg.population,
                reg.total_area_m2 / reg.population,
            )
        )
    return rows, excluded


def _aligned(indicator: Mapping[str, float], reference: Mapping[str, float]):
    regions = sorted(reference)
    if sorted(indicator) != regions:
        raise UndefinedResult("indicator and reference cover different regions")
    if len(regions) < 2:
        raise UndefinedResult("need at least two regions")
    ind = np.asarray([indicator[r] for r in regions], dtype=float)
    ref = np.asarray([reference[r] for r in regions], dtype=float)
    return ind, ref


def _pair_signs(values: np.ndarray) -> np.ndarray:
    """Upper-triangle pairwise ordering signs (+1/0/-1)."""
    diff = values[:, None] - values[None, :]
    iu = np.triu_indices(len(values), k=1)
    return np.sign(diff[iu])


def ranking_agreement(
    indicator: Mapping[str, float], reference: Mapping[str, float]
) -> tuple[int, int, float]:
    """(pairs, agreements, rate) over all unordered region pairs.

    A pair agrees iff the indicator orders it the same way as the reference;
    an exact tie on either side counts as disagreement.
    """
    ind, ref = _aligned(indicator, reference)
    si = _pair_signs(ind)
    sr = _pair_signs(ref)
    agree = (si == sr) & (si != 0)
    return (len(si), int(agree.sum()), float(agree.sum() / len(si)))


@dataclass
class AgreementRow:
    indicator: str
    both_correct: int
    only_this_correct: int
    total_correct: int
    rate: float


def agreement_decomposition(
    ind_a: Mapping[str, float],
    ind_b: Mapping[str, float],
    reference: Mapping[str, float],
    names: tuple[str, str] = ("indicator_a", "indicator_b"),
) -> tuple[list[AgreementRow], int]:
    """Joint ranking-agreement accounting of two indicators vs a reference.

    Returns one row per indicator (pairs where both agree with the
    reference, pairs where only that indicator does, its total and rate) and
    the total number of pairs.
    """
    a, ref = _aligned(ind_a, reference)
    b, _ = _aligned(ind_b, reference)
    sa = _pair_signs(a)
    sb = _pair_signs(b)
    sr = _pair_signs(ref)
    ok_a = (sa == sr) & (sa != 0)
    ok_b = (sb == sr) & (sb != 0)
    both = int((ok_a & ok_b).sum())
    only_a = int((ok_a & ~ok_b).sum())
    only_b = int((ok_b & ~ok_a).sum())
    n_pairs = len(sr)
    rows = [
        AgreementRow(names[0], both, only_a, both + only_a, (both + only_a) / n_pairs),
        AgreementRow(names[1], both, only_b, both + only_b, (both + only_b) / n_pairs),
    ]
    return rows, n_pairs
