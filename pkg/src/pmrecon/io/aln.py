"""ALN v1: binary alignment results.

Layout (little-endian, all reals f64 so round trips are lossless)::

    b"ALN1"  u32 version=1  u32 mode (0 pinhole, 1 free)
    u32 num_views  u32 num_edges  u32 flags  u32 iterations_run
    per view:  u32 width, u32 height
               [cameras]  f64 focal, f64 cx, f64 cy, f64 q[4], f64 t[3]
    per edge:  u32 n, u32 m, f64 scale, f64 q[4], f64 t[3]
    per view:  [depths] f64 depth plane, u8 mask plane
               [points] f64 points plane (x, y, z per pixel), u8 mask plane
    [trace]    u32 count, f64 values

Flags: bit 0 cameras, bit 1 depth planes, bit 2 point planes, bit 3 trace.
Quaternions are ``(w, x, y, z)``, stored as held by the result (unit norm).
"""

from __future__ import annotations

import struct

import numpy as np

from ..alignment.objective import FREE, PINHOLE
from ..alignment.solver import AlignmentResult
from ..geometry import ImageSize, Intrinsics, RigidPose, SimTransform
from ..pointmap import DepthMap, Pointmap
from .common import Reader, atomic_write, read_bytes

MAGIC = b"ALN1"
VERSION = 1
FLAG_CAMERAS = 1
FLAG_DEPTHS = 2
FLAG_POINTS = 4
FLAG_TRACE = 8
_MODES = {PINHOLE: 0, FREE: 1}


def encode_aln(result: AlignmentResult, with_trace=True) -> bytes:
    flags = 0
    if result.intrinsics is not None and result.poses is not None:
        flags |= FLAG_CAMERAS
    if result.depths is not None:
        flags |= FLAG_DEPTHS
    if result.pointmaps is not None:
        flags |= FLAG_POINTS
    if with_trace:
        flags |= FLAG_TRACE
    out = [
        struct.pack(
            "<4sIIIIII", MAGIC, VERSION, _MODES[result.mode], result.num_views, len(result.edges),
            flags, result.iterations_run,
        )
    ]
    for v, size in enumerate(result.sizes):
        out.append(struct.pack("<II", size.width, size.height))
        if flags & FLAG_CAMERAS:
            K, P = result.intrinsics[v], result.poses[v]
            out.append(struct.pack("<3d", K.focal, *K.principal_point))
            out.append(np.asarray(P.rotation, "<f8").tobytes() + np.asarray(P.translation, "<f8").tobytes())
    for n, m, T in result.edges:
        out.append(struct.pack("<IId", n, m, T.scale))
        out.append(np.asarray(T.rotation, "<f8").tobytes() + np.asarray(T.translation, "<f8").tobytes())
    for v in range(result.num_views):
        if flags & FLAG_DEPTHS:
            D = result.depths[v]
            out.append(D.depth.astype("<f8").tobytes() + D.valid.astype(np.uint8).tobytes())
        if flags & FLAG_POINTS:
            pm = result.pointmaps[v]
            out.append(pm.points.astype("<f8").tobytes() + pm.valid.astype(np.uint8).tobytes())
    if flags & FLAG_TRACE:
        out.append(struct.pack("<I", len(result.loss_trace)))
        out.append(np.asarray(result.loss_trace, "<f8").tobytes())
    return b"".join(out)


def decode_aln(data: bytes, path=None) -> AlignmentResult:
    r = Reader(data, path)
    magic, version, mode, nv, ne, flags, iters = r.unpack("<4sIIIIII", "header")
    if magic != MAGIC:
        r.fail(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        r.fail(f"unsupported version {version}", 4)
    modes = {code: name for name, code in _MODES.items()}
    if mode not in modes:
        r.fail(f"unknown mode {mode}", 8)
    if flags & ~(FLAG_CAMERAS | FLAG_DEPTHS | FLAG_POINTS | FLAG_TRACE):
        r.fail(f"unknown flag bits {flags:#x}", 20)

    sizes, intr, poses = [], [], []
    for _ in range(nv):
        w, h = r.unpack("<II", "view header")
        if w == 0 or h == 0:
            r.fail(f"empty view {w}x{h}", r.pos - 8)
        sizes.append(ImageSize(w, h))
        if flags & FLAG_CAMERAS:
            f, cx, cy = r.unpack("<3d", "intrinsics")
            vals = np.frombuffer(r.take(56, "camera pose"), "<f8").astype(np.float64)
            intr.append(Intrinsics(f, (cx, cy)))
            poses.append(RigidPose(vals[:4], vals[4:]))
    edges = []
    for _ in range(ne):
        n, m, s = r.unpack("<IId", "edge header")
        vals = np.frombuffer(r.take(56, "edge transform"), "<f8").astype(np.float64)
        edges.append((n, m, SimTransform(s, vals[:4], vals[4:])))
    depths, pms = [], []
    for size in sizes:
        hw = size.num_pixels
        if flags & FLAG_DEPTHS:
            d = np.frombuffer(r.take(8 * hw, "depth plane"), "<f8").reshape(size.shape).astype(np.float64)
            valid = np.frombuffer(r.take(hw, "depth mask"), np.uint8).reshape(size.shape) != 0
            depths.append(DepthMap(d, valid))
        if flags & FLAG_POINTS:
            p = np.frombuffer(r.take(24 * hw, "points plane"), "<f8").reshape(*size.shape, 3).astype(np.float64)
            valid = np.frombuffer(r.take(hw, "points mask"), np.uint8).reshape(size.shape) != 0
            pms.append(Pointmap(p, valid))
    trace = []
    if flags & FLAG_TRACE:
        (count,) = r.unpack("<I", "trace length")
        trace = np.frombuffer(r.take(8 * count, "trace"), "<f8").astype(np.float64).tolist()
    r.finish()
    return AlignmentResult(
        modes[mode], sizes, edges, trace, iters,
        pointmaps=pms if flags & FLAG_POINTS else None,
        intrinsics=intr if flags & FLAG_CAMERAS else None,
        poses=poses if flags & FLAG_CAMERAS else None,
        depths=depths if flags & FLAG_DEPTHS else None,
    )


def write_aln(path, result: AlignmentResult, with_trace=True):
    atomic_write(path, encode_aln(result, with_trace))


def read_aln(path) -> AlignmentResult:
    return decode_aln(read_bytes(path), path=str(path))
