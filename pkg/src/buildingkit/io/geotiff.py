"""Minimal GeoTIFF reader/writer (classic TIFF, striped, uncompressed).

Covers exactly what the pipeline stores: single-band rasters with pixel
scale, tiepoint and nodata tags, in the common integer and float dtypes.
Writes are deterministic (fixed tag layout), so identical grids round-trip
byte-identically.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import FileFormatError
from ..raster import RasterGrid, Semantic

_TAG_WIDTH = 256
_TAG_LENGTH = 257
_TAG_BITS = 258
_TAG_COMPRESSION = 259
_TAG_PHOTOMETRIC = 262
_TAG_DESCRIPTION = 270
_TAG_STRIP_OFFSETS = 273
_TAG_SAMPLES = 277
_TAG_ROWS_PER_STRIP = 278
_TAG_STRIP_COUNTS = 279
_TAG_PLANAR = 284
_TAG_SAMPLE_FORMAT = 339
_TAG_PIXEL_SCALE = 33550
_TAG_TIEPOINT = 33922
_TAG_GEO_KEYS = 34735
_TAG_GDAL_NODATA = 42113

_TYPE_SIZES = {1: 1, 2: 1, 3: 2, 4: 4, 5: 8, 6: 1, 8: 2, 9: 4, 10: 8, 11: 4, 12: 8}
_TYPE_ASCII = 2
_TYPE_SHORT = 3
_TYPE_LONG = 4
_TYPE_DOUBLE = 12

# (sample_format, bits) -> numpy dtype
_FORMATS = {
    (1, 8): np.uint8,
    (1, 16): np.uint16,
    (1, 32): np.uint32,
    (2, 16): np.int16,
    (2, 32): np.int32,
    (3, 32): np.float32,
    (3, 64): np.float64,
}
_DTYPE_TO_FORMAT = {np.dtype(d): key for key, d in _FORMATS.items()}


def _sample_format_of(dtype: np.dtype) -> tuple[int, int]:
    try:
        return _DTYPE_TO_FORMAT[np.dtype(dtype)]
    except KeyError:
        raise FileFormatError(f"unsupported raster dtype {dtype}") from None


def write_geotiff(path, grid: RasterGrid) -> None:
    """Serialize a grid as little-endian striped GeoTIFF."""
    path = Path(path)
    values = np.ascontiguousarray(grid.values)
    fmt, bits = _sample_format_of(values.dtype)
    data = values.astype(values.dtype.newbyteorder("<"), copy=False).tobytes()
    h, w = values.shape
    row_bytes = w * bits // 8
    rows_per_strip = max(1, 65536 // max(row_bytes, 1))
    n_strips = (h + rows_per_strip - 1) // rows_per_strip
    counts = [
        min(rows_per_strip, h - s * rows_per_strip) * row_bytes
        for s in range(n_strips)
    ]

    description = json.dumps(
        {"semantic": grid.semantic.value, "units": grid.units}, sort_keys=True
    ).encode() + b"\x00"
    if grid.nodata is None:
        nodata_ascii = None
    else:
        nodata = grid.nodata
        if values.dtype.kind in "iu" and float(nodata).is_integer():
            nodata = int(nodata)
        nodata_ascii = repr(nodata).encode() + b"\x00"
    # GTModelType: 2 = geographic (degrees), 1 = projected; GTRasterType: 1 = area
    model = 2 if grid.units == "deg" else 1
    geo_keys = struct.pack("<16H", 1, 1, 0, 3, 1024, 0, 1, model, 1025, 0, 1, 1, 3072, 0, 1, 32767)
    pixel_scale = struct.pack("<3d", grid.pixel_size[0], grid.pixel_size[1], 0.0)
    tiepoint = struct.pack("<6d", 0.0, 0.0, 0.0, grid.origin[0], grid.origin[1], 0.0)

    entries: list[tuple[int, int, int, bytes]] = [
        (_TAG_WIDTH, _TYPE_LONG, 1, struct.pack("<I", w)),
        (_TAG_LENGTH, _TYPE_LONG, 1, struct.pack("<I", h)),
        (_TAG_BITS, _TYPE_SHORT, 1, struct.pack("<H", bits)),
        (_TAG_COMPRESSION, _TYPE_SHORT, 1, struct.pack("<H", 1)),
        (_TAG_PHOTOMETRIC, _TYPE_SHORT, 1, struct.pack("<H", 1)),
        (_TAG_DESCRIPTION, _TYPE_ASCII, len(description), description),
        (_TAG_STRIP_OFFSETS, _TYPE_LONG, n_strips, b""),  # patched below
        (_TAG_SAMPLES, _TYPE_SHORT, 1, struct.pack("<H", 1)),
        (_TAG_ROWS_PER_STRIP, _TYPE_LONG, 1, struct.pack("<I", rows_per_strip)),
        (_TAG_STRIP_COUNTS, _TYPE_LONG, n_strips, struct.pack(f"<{n_strips}I", *counts)),
        (_TAG_PLANAR, _TYPE_SHORT, 1, struct.pack("<H", 1)),
        (_TAG_SAMPLE_FORMAT, _TYPE_SHORT, 1, struct.pack("<H", fmt)),
        (_TAG_PIXEL_SCALE, _TYPE_DOUBLE, 3, pixel_scale),
        (_TAG_TIEPOINT, _TYPE_DOUBLE, 6, tiepoint),
        (_TAG_GEO_KEYS, _TYPE_SHORT, 16, geo_keys),
    ]
    if nodata_ascii is not None:
        entries.append((_TAG_GDAL_NODATA, _TYPE_ASCII, len(nodata_ascii), nodata_ascii))
    entries.sort(key=lambda e: e[0])

    ifd_offset = 8
    ifd_size = 2 + 12 * len(entries) + 4
    extra_offset = ifd_offset + ifd_size
    extra = bytearray()
    final = []
    strip_dir_pos = None
    for tag, typ, count, payload in entries:
        if tag == _TAG_STRIP_OFFSETS:
            if n_strips == 1:
                final.append((tag, typ, count, None))
            else:
                strip_dir_pos = extra_offset + len(extra)
                final.append((tag, typ, count, struct.pack("<I", strip_dir_pos)))
                extra.extend(b"\x00" * 4 * n_strips)
            continue
        size = _TYPE_SIZES[typ] * count
        if size <= 4:
            final.append((tag, typ, count, payload.ljust(4, b"\x00")))
        else:
            final.append((tag, typ, count, struct.pack("<I", extra_offset + len(extra))))
            extra.extend(payload)
    data_offset = extra_offset + len(extra)
    offsets = []
    pos = data_offset
    for c in counts:
        offsets.append(pos)
        pos += c
    blob = bytearray()
    blob.extend(struct.pack("<2sHI", b"II", 42, ifd_offset))
    blob.extend(struct.pack("<H", len(final)))
    for tag, typ, count, payload in final:
        if tag == _TAG_STRIP_OFFSETS and n_strips == 1:
            payload = struct.pack("<I", offsets[0])
        blob.extend(struct.pack("<HHI", tag, typ, count))
        blob.extend(payload)
    blob.extend(struct.pack("<I", 0))
    blob.extend(extra)
    if n_strips > 1:
        blob[strip_dir_pos : strip_dir_pos + 4 * n_strips] = struct.pack(
            f"<{n_strips}I", *offsets
        )
    blob.extend(data)
    path.write_bytes(bytes(blob))


def _read_values(buf: bytes, endian: str, typ: int, count: int, raw: bytes):
    size = _TYPE_SIZES.get(typ)
    if size is None:
        raise FileFormatError(f"unknown TIFF field type {typ}")
    total = size * count
    payload = raw[:4] if total <= 4 else None
    if payload is None:
        (offset,) = struct.unpack(endian + "I", raw)
        payload = buf[offset : offset + total]
    if typ == _TYPE_ASCII:
        return payload[:count].split(b"\x00")[0].decode("latin-1")
    fmt_char = {1: "B", 3: "H", 4: "I", 6: "b", 8: "h", 9: "i", 11: "f", 12: "d"}.get(typ)
    if fmt_char is None:
        raise FileFormatError(f"unsupported TIFF field type {typ}")
    return list(struct.unpack(f"{endian}{count}{fmt_char}", payload[:total]))


def read_geotiff(path) -> RasterGrid:
    """Parse a striped single-band GeoTIFF written by this module (or alike)."""
    buf = Path(path).read_bytes()
    if len(buf) < 8:
        raise FileFormatError(f"{path}: not a TIFF file")
    if buf[:2] == b"II":
        endian = "<"
    elif buf[:2] == b"MM":
        endian = ">"
    else:
        raise FileFormatError(f"{path}: bad TIFF byte-order mark")
    magic, ifd_offset = struct.unpack(endian + "HI", buf[2:8])
    if magic != 42:
        raise FileFormatError(f"{path}: not a classic TIFF (magic={magic})")
    (n_entries,) = struct.unpack(endian + "H", buf[ifd_offset : ifd_offset + 2])
    tags: dict[int, object] = {}
    for i in range(n_entries):
        base = ifd_offset + 2 + 12 * i
        tag, typ, count = struct.unpack(endian + "HHI", buf[base : base + 8])
        try:
            tags[tag] = _read_values(buf, endian, typ, count, buf[base + 8 : base + 12])
        except FileFormatError:
            continue  # tolerate exotic private tags

    def one(tag: int, default=None):
        val = tags.get(tag, default)
        return val[0] if isinstance(val, list) else val

    width = one(_TAG_WIDTH)
    height = one(_TAG_LENGTH)
    if width is None or height is None:
        raise FileFormatError(f"{path}: missing image dimensions")
    if one(_TAG_COMPRESSION, 1) != 1:
        raise FileFormatError(f"{path}: compressed TIFFs are not supported")
    if one(_TAG_SAMPLES, 1) != 1:
        raise FileFormatError(f"{path}: only single-band rasters are supported")
    bits = one(_TAG_BITS, 8)
    fmt = one(_TAG_SAMPLE_FORMAT, 1)
    dtype = _FORMATS.get((fmt, bits))
    if dtype is None:
        raise FileFormatError(f"{path}: unsupported sample format ({fmt}, {bits})")
    offsets = tags.get(_TAG_STRIP_OFFSETS)
    counts = tags.get(_TAG_STRIP_COUNTS)
    if offsets is None or counts is None:
        raise FileFormatError(f"{path}: missing strip layout")
    raw = b"".join(
        buf[int(o) : int(o) + int(c)] for o, c in zip(offsets, counts)
    )
    values = np.frombuffer(raw, dtype=np.dtype(dtype).newbyteorder(endian))
    if values.size != width * height:
        raise FileFormatError(f"{path}: strip data does not match dimensions")
    values = values.reshape(height, width).astype(dtype)

    scale = tags.get(_TAG_PIXEL_SCALE)
    tiepoint = tags.get(_TAG_TIEPOINT)
    if scale is None or tiepoint is None:
        raise FileFormatError(f"{path}: missing georeferencing tags")
    dx, dy = float(scale[0]), float(scale[1])
    # tiepoint maps raster (i, j) to model (x, y); normalize to the UL corner
    i, j, _, x, y, _ = (float(v) for v in tiepoint[:6])
    origin = (x - i * dx, y + j * dy)

    nodata_text = tags.get(_TAG_GDAL_NODATA)
    nodata = None
    if isinstance(nodata_text, str) and nodata_text.strip():
        nodata = float(nodata_text.strip())
    semantic = Semantic.PROBABILITY
    units = "deg"
    desc = tags.get(_TAG_DESCRIPTION)
    if isinstance(desc, str):
        try:
            meta = json.loads(desc)
            semantic = Semantic(meta.get("semantic", semantic.value))
            units = meta.get("units", units)
        except (ValueError, TypeError):
            pass
    return RasterGrid(origin, (dx, dy), values, nodata, semantic, units)
