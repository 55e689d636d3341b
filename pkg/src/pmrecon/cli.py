"""Command-line entry point: ``pmrecon <command> ...``.

Every command is a thin wrapper over library calls. Failures print one
line ``error: <category>: <message>`` on stderr and exit with a code that
identifies the category.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .alignment import AlignConfig, align_free, align_pinhole, build_graph
from .alignment.objective import FREE, PINHOLE
from .geometry import ImageSize, Intrinsics, RigidPose
from .io import ParseError, atomic_write, read_aln, read_pmap, write_aln, write_pair, write_pmap
from .io.ply import collect_points, encode_ply
from .metrics import eval_depth, eval_relative_poses
from .oracle import NoiseModel, default_scene_spec, generate_scene, predict_pair, resolved_spec
from .pointmap import depth_to_pointmap, pointmap_to_depth
from .recovery import RansacConfig, estimate_focal, match_points, relative_pose

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_COMPUTE = 4
EXIT_IO = 5

PAIR_PATTERN = re.compile(r"pair_(\d+)_(\d+)\.pmap$")
log = logging.getLogger("pmrecon")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _dump_json(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8")


def _emit(payload: bytes, out):
    if out:
        atomic_write(out, payload)
    else:
        sys.stdout.write(payload.decode("utf-8"))


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.pos, path=str(path)) from None


def _palette(ids):
    """Deterministic per-primitive colors (background black)."""
    ids = np.asarray(ids, dtype=np.int64)
    h = (ids * 2654435761) & 0xFFFFFF
    rgb = np.stack([(h >> 16) & 255, (h >> 8) & 255, h & 255], axis=-1)
    return np.where(ids[..., None] >= 0, 64 + rgb % 192, 0).astype(np.uint8)


# camera lists as JSON


def cameras_to_json(sizes, intrinsics, poses):
    views = []
    for size, K, P in zip(sizes, intrinsics, poses):
        views.append(
            {
                "width": size.width,
                "height": size.height,
                "focal": K.focal,
                "principal_point": list(K.principal_point),
                "pose": {"q": P.rotation.tolist(), "t": P.translation.tolist()},
            }
        )
    return {"views": views}


def cameras_from_json(doc, path=None):
    try:
        views = doc["views"]
        sizes = [ImageSize(v["width"], v["height"]) for v in views]
        intr = [Intrinsics(v["focal"], tuple(v["principal_point"])) for v in views]
        poses = [RigidPose(np.array(v["pose"]["q"], float), np.array(v["pose"]["t"], float)) for v in views]
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise ParseError(f"malformed camera list: {exc!r}", 0, path=path) from None
    return sizes, intr, poses


def _load_cameras(path):
    path = Path(path)
    if path.suffix == ".aln":
        res = read_aln(path)
        if res.poses is None:
            raise ValueError(f"{path}: alignment result has no cameras (free mode)")
        return res.sizes, res.intrinsics, res.poses
    return cameras_from_json(_load_json(path), str(path))


# commands


def cmd_gen(args):
    if args.spec:
        spec = _load_json(args.spec)
    else:
        spec = default_scene_spec(args.views, args.width, args.height, seed=args.seed)
    scene = generate_scene(spec, seed=args.seed)
    noise = NoiseModel(args.noise, args.outlier_rate, args.outlier_magnitude, args.conf_fidelity)
    out = Path(args.out)
    (out / "pairs").mkdir(parents=True, exist_ok=True)
    (out / "views").mkdir(parents=True, exist_ok=True)
    atomic_write(out / "scene.json", _dump_json({"seed": scene.seed, "spec": resolved_spec(scene)}))
    sizes = [v.size for v in scene.views]
    intr = [v.intrinsics for v in scene.views]
    poses = [v.pose for v in scene.views]
    atomic_write(out / "poses.json", _dump_json(cameras_to_json(sizes, intr, poses)))
    for k, v in enumerate(scene.views):
        pm = depth_to_pointmap(v.depth, v.intrinsics)
        write_pmap(out / "views" / f"view_{k}.pmap", pm, colors=_palette(v.primitive), mask=True)
    n_views = len(scene.views)
    for n in range(n_views):
        for m in range(n_views):
            if n != m:
                pair = predict_pair(scene, n, m, noise, seed=args.seed)
                write_pair(out / "pairs" / f"pair_{n}_{m}.pmap", pair)
    print(f"wrote {n_views} views and {n_views * (n_views - 1)} pairs to {out}")


def _single_view(path):
    data = read_pmap(path)
    if data.is_pair:
        data = data.split_pair()[0]
    return data


def cmd_match(args):
    if len(args.inputs) == 1:
        data = read_pmap(args.inputs[0])
        if not data.is_pair:
            raise UsageError("match with one input needs a pair file")
        a, b = data.split_pair()
    elif len(args.inputs) == 2:
        a, b = _single_view(args.inputs[0]), _single_view(args.inputs[1])
    else:
        raise UsageError("match takes one pair file or two pointmaps")
    corr = match_points(a.pointmap, b.pointmap)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["i1", "j1", "i2", "j2", "distance"])
    for (i1, j1), (i2, j2), d in zip(corr.pixels1, corr.pixels2, corr.distances):
        wr.writerow([int(i1), int(j1), int(i2), int(j2), repr(float(d))])
    _emit(buf.getvalue().encode("utf-8"), args.out)
    if args.out:
        print(f"{len(corr)} matches")


def cmd_focal(args):
    data = _single_view(args.input)
    f = estimate_focal(data.pointmap, data.confidence)
    print(repr(float(f)))


def cmd_relpose(args):
    pair12 = read_pmap(args.pair12).to_pair()
    pair21 = read_pmap(args.pair21).to_pair()
    ransac = RansacConfig(rng_seed=args.seed)
    pose = relative_pose(pair12, pair21, method=args.method, ransac=ransac)
    doc = {"method": args.method, "q": pose.rotation.tolist(), "t": pose.translation.tolist()}
    if hasattr(pose, "scale"):
        doc["scale"] = float(pose.scale)
    _emit(_dump_json(doc), args.out)


def load_graph(folder, keep_threshold=0.0):
    folder = Path(folder)
    if (folder / "pairs").is_dir():
        folder = folder / "pairs"
    preds = {}
    for path in sorted(folder.iterdir()):
        m = PAIR_PATTERN.search(path.name)
        if m:
            preds[(int(m.group(1)), int(m.group(2)))] = read_pmap(path).to_pair()
    if not preds:
        raise FileNotFoundError(f"no pair_<n>_<m>.pmap files in {folder}")
    return build_graph(preds, keep_threshold)


def cmd_align(args):
    graph = load_graph(args.graph)
    mode = PINHOLE if args.mode == "pinhole" else FREE
    cfg = AlignConfig(
        mode=mode, iterations=args.iters, learning_rate=args.lr, rng_seed=args.seed, min_conf_keep=args.min_conf_keep
    )
    res = align_pinhole(graph, cfg) if mode == PINHOLE else align_free(graph, cfg)
    write_aln(args.out, res)
    if args.trace:
        lines = ["iteration,loss"] + [f"{k},{loss!r}" for k, loss in enumerate(res.loss_trace)]
        atomic_write(args.trace, ("\n".join(lines) + "\n").encode("ascii"))
    print(f"loss {res.loss_trace[0]!r} -> {res.loss_trace[-1]!r} after {res.iterations_run} iterations")


def _depth_of(path):
    data = _single_view(path)
    return pointmap_to_depth(data.pointmap)


def cmd_eval_depth(args):
    rep = eval_depth(_depth_of(args.pred), _depth_of(args.gt), normalize=args.normalize, tau=args.tau)
    _emit(_dump_json(rep.to_dict()), args.out)


def _thresholds(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"bad threshold list {text!r}") from None
    if not vals or any(not v > 0 for v in vals):
        raise UsageError(f"thresholds must be positive, got {text!r}")
    return vals


def cmd_eval_pose(args):
    _, _, gt = _load_cameras(args.gt)
    _, _, pred = _load_cameras(args.pred)
    rep = eval_relative_poses(gt, pred, _thresholds(args.thresholds))
    _emit(_dump_json(rep.to_dict(with_errors=args.errors)), args.out)


def cmd_export_ply(args):
    src = Path(args.input)
    if src.suffix == ".aln":
        res = read_aln(src)
        pts, cols = collect_points(res.world_pointmaps())
    else:
        data = read_pmap(src)
        pts, cols = collect_points(
            data.pointmap, data.colors, data.confidence, None if args.min_conf <= 0 else args.min_conf
        )
    atomic_write(args.output, encode_ply(pts, cols, args.format))
    print(f"{len(pts)} points")


def cmd_aln_export(args):
    res = read_aln(args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world = res.world_pointmaps()
    for v, pm in enumerate(world):
        write_pmap(out / f"world_{v}.pmap", pm, mask=True)
    if res.poses is not None:
        atomic_write(out / "poses.json", _dump_json(cameras_to_json(res.sizes, res.intrinsics, res.poses)))
        for v, (K, D) in enumerate(zip(res.intrinsics, res.depths)):
            write_pmap(out / f"view_{v}.pmap", depth_to_pointmap(D, K), mask=True)
    print(f"exported {res.num_views} views to {out}")


def build_parser():
    p = _Parser(prog="pmrecon", description="Pointmap-based 3D reconstruction toolkit.")
    p.add_argument("--version", action="version", version=f"pmrecon {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="render an oracle scene and its pair predictions")
    g.add_argument("--spec", help="scene spec JSON (default: built-in scene)")
    g.add_argument("--out", required=True)
    g.add_argument("--views", type=int, default=5)
    g.add_argument("--width", type=int, default=64)
    g.add_argument("--height", type=int, default=64)
    g.add_argument("--noise", type=float, default=0.0, help="point noise, fraction of depth")
    g.add_argument("--outlier-rate", type=float, default=0.0)
    g.add_argument("--outlier-magnitude", type=float, default=1.0)
    g.add_argument("--conf-fidelity", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen)

    m = sub.add_parser("match", help="mutual nearest neighbours between two pointmaps")
    m.add_argument("inputs", nargs="+", help="a pair file, or two pointmaps in one frame")
    m.add_argument("--out")
    m.set_defaults(func=cmd_match)

    f = sub.add_parser("focal", help="estimate the focal length of a camera-frame pointmap")
    f.add_argument("input")
    f.set_defaults(func=cmd_focal)

    r = sub.add_parser("relpose", help="relative pose from the two pair predictions of two views")
    r.add_argument("pair12")
    r.add_argument("pair21")
    r.add_argument("--method", choices=["procrustes", "pnp"], default="procrustes")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out")
    r.set_defaults(func=cmd_relpose)

    a = sub.add_parser("align", help="global alignment of a folder of pair predictions")
    a.add_argument("--graph", required=True)
    a.add_argument("--mode", choices=["free", "pinhole"], default="pinhole")
    a.add_argument("--iters", type=int, default=300)
    a.add_argument("--lr", type=float, default=0.01)
    a.add_argument("--min-conf-keep", type=float, default=1.5)
    a.add_argument("--out", required=True)
    a.add_argument("--trace", help="write the loss trace as CSV (iteration,loss)")
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=cmd_align)

    d = sub.add_parser("eval-depth", help="depth metrics between two pointmaps (z is depth)")
    d.add_argument("pred")
    d.add_argument("gt")
    d.add_argument("--normalize", choices=["median", "none"], default="median")
    d.add_argument("--tau", type=float, default=1.03)
    d.add_argument("--out")
    d.set_defaults(func=cmd_eval_depth)

    e = sub.add_parser("eval-pose", help="relative pose metrics (camera lists as .json or .aln)")
    e.add_argument("gt")
    e.add_argument("pred")
    e.add_argument("--thresholds", default="5,15,30")
    e.add_argument("--errors", action="store_true", help="include per-pair errors")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval_pose)

    x = sub.add_parser("export-ply", help="export a .pmap or .aln as a PLY point cloud")
    x.add_argument("input")
    x.add_argument("output")
    x.add_argument("--min-conf", type=float, default=1.5, help="drop pixels below this confidence")
    x.add_argument("--format", choices=["binary", "ascii"], default="binary")
    x.set_defaults(func=cmd_export_ply)

    y = sub.add_parser("aln-export", help="write poses.json and per-view pointmaps from a .aln")
    y.add_argument("input")
    y.add_argument("--out", required=True)
    y.set_defaults(func=cmd_aln_export)
    return p


def _fail(code, category, exc):
    msg = " ".join(str(exc).split()) or type(exc).__name__
    print(f"error: {category}: {msg}", file=sys.stderr)
    return code


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except ParseError as exc:
        return _fail(EXIT_PARSE, "parse", exc)
    except OSError as exc:
        return _fail(EXIT_IO, "io", exc)
    except (ValueError, RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_COMPUTE, "compute", exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
