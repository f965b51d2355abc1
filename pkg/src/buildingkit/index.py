"""Static bounding-box tree over footprint records.

Sort-Tile-Recursive packing: leaves hold a fixed number of entries, interior
nodes store the union bbox of their children. The tree is read-only after
construction; queries return every payload whose bbox intersects the query
bbox (a superset of true geometric hits, to be refined by exact tests).
"""

from __future__ import annotations

import math
from typing import Any, Sequence

import numpy as np

from .geometry import FootprintRecord

_LEAF_SIZE = 16


class SpatialIndex:
    def __init__(self, bboxes: np.ndarray, payloads: Sequence[Any]):
        bboxes = np.asarray(bboxes, dtype=float).reshape(-1, 4)
        if len(bboxes) != len(payloads):
            raise ValueError("one bbox per payload required")
        self._payloads = list(payloads)
        self._empty = len(payloads) == 0
        if self._empty:
            return
        order = self._str_pack(bboxes)
        self._order = order
        self._boxes = bboxes[order]
        # level 0: leaf-group bboxes; higher levels until a single root
        self._levels: list[np.ndarray] = []
        boxes = self._boxes
        while len(boxes) > 1:
            n = math.ceil(len(boxes) / _LEAF_SIZE)
            grouped = np.empty((n, 4))
            for i in range(n):
                chunk = boxes[i * _LEAF_SIZE : (i + 1) * _LEAF_SIZE]
                grouped[i] = (
                    chunk[:, 0].min(),
                    chunk[:, 1].min(),
                    chunk[:, 2].max(),
                    chunk[:, 3].max(),
                )
            self._levels.append(grouped)
            boxes = grouped

    @staticmethod
    def _str_pack(bboxes: np.ndarray) -> np.ndarray:
        cx = 0.5 * (bboxes[:, 0] + bboxes[:, 2])
        cy = 0.5 * (bboxes[:, 1] + bboxes[:, 3])
        n = len(bboxes)
        n_slices = max(int(math.ceil(math.sqrt(n / _LEAF_SIZE))), 1)
        by_x = np.argsort(cx, kind="stable")
        slice_len = math.ceil(n / n_slices)
        order = []
        for s in range(n_slices):
            part = by_x[s * slice_len : (s + 1) * slice_len]
            order.extend(part[np.argsort(cy[part], kind="stable")])
        return np.asarray(order, dtype=int)

    @classmethod
    def from_records(cls, records: Sequence[FootprintRecord]) -> "SpatialIndex":
        boxes = np.asarray([r.geometry.bounds for r in records], dtype=float)
        return cls(boxes.reshape(-1, 4), records)

    def query(self, bbox) -> list:
        """Payloads whose bbox intersects (touches counts) the query bbox."""
        if self._empty:
            return []
        qx0, qy0, qx1, qy1 = (float(v) for v in bbox)

        def hits(boxes: np.ndarray) -> np.ndarray:
            return ~(
                (boxes[:, 0] > qx1)
                | (boxes[:, 2] < qx0)
                | (boxes[:, 1] > qy1)
                | (boxes[:, 3] < qy0)
            )

        # walk down from the root, keeping candidate group indices per level
        groups = np.arange(len(self._levels[-1])) if self._levels else np.array([0])
        for level in reversed(range(len(self._levels))):
            boxes = self._levels[level]
            keep = groups[hits(boxes[groups])]
            if level == 0:
                groups = keep
                break
            children = []
            for g in keep:
                lo = g * _LEAF_SIZE
                hi = min(lo + _LEAF_SIZE, len(self._levels[level - 1]))
                children.extend(range(lo, hi))
            groups = np.asarray(children, dtype=int)
            if groups.size == 0:
                return []
        out = []
        for g in np.atleast_1d(groups):
            lo = g * _LEAF_SIZE
            hi = min(lo + _LEAF_SIZE, len(self._boxes))
            idx = np.arange(lo, hi)
            for i in idx[hits(self._boxes[lo:hi])]:
                out.append(self._payloads[self._order[i]])
        return out

    def __len__(self) -> int:
        return len(self._payloads)
