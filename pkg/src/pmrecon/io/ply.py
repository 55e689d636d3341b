"""Point cloud export to PLY (ascii or binary little-endian)."""

from __future__ import annotations

import numpy as np

from ..pointmap import Pointmap
from .common import atomic_write

FORMATS = ("ascii", "binary")


def _header(n, fmt, with_color):
    lines = [
        "ply",
        "format ascii 1.0" if fmt == "ascii" else "format binary_little_endian 1.0",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if with_color:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def collect_points(pointmaps, colors=None, confidences=None, min_conf=None):
    """Stack the valid (and confident enough) pixels of several pointmaps.

    ``colors`` and ``confidences`` are per-pointmap lists whose entries may
    be ``None``. Returns ``(points (N, 3), colors (N, 3) or None)``.
    """
    if isinstance(pointmaps, Pointmap):
        pointmaps, colors, confidences = [pointmaps], [colors], [confidences]
    n = len(pointmaps)
    colors = list(colors) if colors is not None else [None] * n
    confidences = list(confidences) if confidences is not None else [None] * n
    with_color = n > 0 and all(c is not None for c in colors)
    pts, cols = [], []
    for pm, col, conf in zip(pointmaps, colors, confidences):
        keep = pm.valid.copy()
        if conf is not None and min_conf is not None:
            w = conf.weight if hasattr(conf, "weight") else np.asarray(conf)
            keep &= w >= min_conf
        pts.append(pm.points[keep])
        if with_color:
            cols.append(np.asarray(col)[keep])
    points = np.concatenate(pts) if pts else np.zeros((0, 3))
    return points, (np.concatenate(cols).astype(np.uint8) if with_color else None)


def encode_ply(points, colors=None, fmt="binary") -> bytes:
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}, got {fmt!r}")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise ValueError("refusing to export an empty point cloud")
    xyz = points.astype("<f4")
    if colors is not None:
        colors = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
        if len(colors) != len(points):
            raise ValueError(f"{len(colors)} colors for {len(points)} points")
    head = _header(len(points), fmt, colors is not None)
    if fmt == "binary":
        if colors is None:
            return head + xyz.tobytes()
        rec = np.empty(len(points), dtype=[("xyz", "<f4", 3), ("rgb", "u1", 3)])
        rec["xyz"], rec["rgb"] = xyz, colors
        return head + rec.tobytes()
    # ascii: repr of the float32 value reads back to the identical float32
    rows = []
    for k, p in enumerate(xyz):
        line = " ".join(repr(float(c)) for c in p)
        if colors is not None:
            line += " " + " ".join(str(int(c)) for c in colors[k])
        rows.append(line)
    return head + ("\n".join(rows) + "\n").encode("ascii")


def export_ply(path, points, colors=None, fmt="binary"):
    """Write a PLY file; ``points`` is an ``(N, 3)`` array or a Pointmap (invalid pixels skipped)."""
    if isinstance(points, Pointmap):
        points, colors = collect_points(points, colors)
    atomic_write(path, encode_ply(points, colors, fmt))


def read_ply(path):
    """Parse a PLY written by :func:`export_ply` (vertex x, y, z and optional colors)."""
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.index(b"end_header\n") + len(b"end_header\n")
    header = data[:end].decode("ascii").splitlines()
    if header[0] != "ply":
        raise ValueError("not a PLY file")
    n = next(int(line.split()[2]) for line in header if line.startswith("element vertex"))
    with_color = any(line.endswith(" red") for line in header)
    body = data[end:]
    if "format ascii 1.0" in header:
        rows = np.array([line.split() for line in body.decode("ascii").splitlines()[:n]], dtype=np.float64)
        pts = rows[:, :3].astype(np.float32)
        cols = rows[:, 3:6].astype(np.uint8) if with_color else None
        return pts, cols
    if with_color:
        rec = np.frombuffer(body, dtype=[("xyz", "<f4", 3), ("rgb", "u1", 3)], count=n)
        return rec["xyz"].copy(), rec["rgb"].copy()
    return np.frombuffer(body, dtype="<f4", count=3 * n).reshape(n, 3).copy(), None
