"""PMAP v1: binary pointmaps with optional mask, confidence and color planes.

Layout (little-endian): ``b"PMAP"``, u32 version (1), u32 width,
u32 height, u32 flags, then the f32 points plane (row-major, 3 values per
pixel) followed by the optional planes in flag-bit order:

* bit 0: mask plane, u8 per pixel (nonzero = valid)
* bit 1: confidence plane, f32 per pixel
* bit 2: color plane, 3 x u8 per pixel
* bit 3: the file holds a pair; the stored image has height ``2 H`` with
  the first view on top of the second (both in the first view's frame)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..pointmap import ConfidenceMap, PairPrediction, Pointmap
from .common import ParseError, Reader, atomic_write, read_bytes

MAGIC = b"PMAP"
VERSION = 1
FLAG_MASK = 1
FLAG_CONF = 2
FLAG_COLOR = 4
FLAG_PAIR = 8
_KNOWN_FLAGS = FLAG_MASK | FLAG_CONF | FLAG_COLOR | FLAG_PAIR
_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True, eq=False)
class PmapData:
    """Decoded PMAP contents; ``confidence`` and ``colors`` may be ``None``."""

    pointmap: Pointmap
    confidence: ConfidenceMap | None = None
    colors: np.ndarray | None = None
    is_pair: bool = False
    has_mask: bool = False

    def split_pair(self):
        """``(view1, view2)`` halves of a pair file, each a ``PmapData``."""
        if not self.is_pair:
            raise ValueError("not a pair file")
        h = self.pointmap.size.height // 2
        halves = []
        for rows in (slice(0, h), slice(h, 2 * h)):
            pm = Pointmap(self.pointmap.points[rows], self.pointmap.valid[rows])
            conf = None if self.confidence is None else ConfidenceMap(self.confidence.weight[rows])
            col = None if self.colors is None else self.colors[rows]
            halves.append(PmapData(pm, conf, col, False, self.has_mask))
        return tuple(halves)

    def to_pair(self) -> PairPrediction:
        a, b = self.split_pair()
        c1 = a.confidence or ConfidenceMap.constant(a.pointmap.size)
        c2 = b.confidence or ConfidenceMap.constant(b.pointmap.size)
        return PairPrediction(a.pointmap, c1, b.pointmap, c2)


def encode_pmap(pointmap: Pointmap, confidence=None, colors=None, is_pair=False, mask=None) -> bytes:
    """Serialize to PMAP bytes.

    The mask plane is written when some pixel is invalid, or when ``mask``
    is True explicitly.
    """
    h, w = pointmap.size.shape
    if is_pair and h % 2:
        raise ValueError("a pair image must have an even height")
    if mask is None:
        mask = not bool(np.all(pointmap.valid))
    flags = (FLAG_MASK if mask else 0) | (FLAG_PAIR if is_pair else 0)
    parts = [b"", pointmap.points.astype("<f4").tobytes()]
    if mask:
        parts.append(pointmap.valid.astype(np.uint8).tobytes())
    if confidence is not None:
        weight = confidence.weight if isinstance(confidence, ConfidenceMap) else np.asarray(confidence)
        if weight.shape != (h, w):
            raise ValueError(f"confidence shape {weight.shape} != {(h, w)}")
        flags |= FLAG_CONF
        parts.append(weight.astype("<f4").tobytes())
    if colors is not None:
        colors = np.asarray(colors)
        if colors.shape != (h, w, 3):
            raise ValueError(f"color shape {colors.shape} != {(h, w, 3)}")
        flags |= FLAG_COLOR
        parts.append(colors.astype(np.uint8).tobytes())
    parts[0] = _HEADER.pack(MAGIC, VERSION, w, h, flags)
    return b"".join(parts)


def decode_pmap(data: bytes, path=None) -> PmapData:
    r = Reader(data, path)
    magic, version, w, h, flags = r.unpack("<4sIIII", "header")
    if magic != MAGIC:
        r.fail(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        r.fail(f"unsupported version {version}", 4)
    if flags & ~_KNOWN_FLAGS:
        r.fail(f"unknown flag bits {flags & ~_KNOWN_FLAGS:#x}", 16)
    if w == 0 or h == 0:
        r.fail(f"empty image {w}x{h}", 8)
    n = w * h
    pts = np.frombuffer(r.take(12 * n, "points plane"), dtype="<f4").reshape(h, w, 3).astype(np.float64)
    valid = None
    if flags & FLAG_MASK:
        valid = np.frombuffer(r.take(n, "mask plane"), dtype=np.uint8).reshape(h, w) != 0
    conf = None
    if flags & FLAG_CONF:
        start = r.pos
        weight = np.frombuffer(r.take(4 * n, "confidence plane"), dtype="<f4").reshape(h, w).astype(np.float64)
        try:
            conf = ConfidenceMap(weight)
        except ValueError as exc:
            raise ParseError(f"invalid confidence plane: {exc}", start, path=path) from None
    colors = None
    if flags & FLAG_COLOR:
        colors = np.frombuffer(r.take(3 * n, "color plane"), dtype=np.uint8).reshape(h, w, 3).copy()
    r.finish()
    is_pair = bool(flags & FLAG_PAIR)
    if is_pair and h % 2:
        r.fail(f"pair file with odd height {h}", 12)
    return PmapData(Pointmap(pts, valid), conf, colors, is_pair, bool(flags & FLAG_MASK))


def read_pmap(path) -> PmapData:
    return decode_pmap(read_bytes(path), path=str(path))


def write_pmap(path, pointmap: Pointmap, confidence=None, colors=None, mask=None):
    atomic_write(path, encode_pmap(pointmap, confidence, colors, mask=mask))


def write_pair(path, pair: PairPrediction, colors=None):
    """Store a pair prediction (both views plus confidences) in one file."""
    if pair.pts1.size != pair.pts2.size:
        raise ValueError("pair views must share a size")
    pts = np.concatenate([pair.pts1.points, pair.pts2.points])
    valid = np.concatenate([pair.pts1.valid, pair.pts2.valid])
    conf = np.concatenate([pair.conf1.weight, pair.conf2.weight])
    atomic_write(path, encode_pmap(Pointmap(pts, valid), conf, colors, is_pair=True))


def read_pair(path) -> PairPrediction:
    data = read_pmap(path)
    if not data.is_pair:
        raise ParseError("file holds a single view, expected a pair", 16, path=str(path))
    return data.to_pair()
