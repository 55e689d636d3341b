"""Compare the compiled kernels with the numpy fallback.

Run from the repository root::

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each row reports the best wall time over ``--repeat`` runs per backend and
the speedup of the compiled path. Without a built extension only the numpy
column is filled.
"""

import argparse
import json
import sys
import timeit

import numpy as np

from pmrecon import kernels
from pmrecon.alignment import PINHOLE, AlignmentProblem, build_graph, initialize_pinhole, pinhole_params
from pmrecon.oracle import default_scene_spec, generate_scene, predict_pair
from pmrecon.oracle.scene import camera_rays, cast


def _cases(rng):
    n = 200_000
    chi, y, w = rng.normal(size=(n, 3)), rng.normal(size=(n, 3)), rng.uniform(1, 3, n)
    q, r = rng.normal(size=(2048, 3)), rng.normal(size=(2048, 3))

    scene = generate_scene(default_scene_spec(num_views=2, width=96, height=96, seed=0))
    view = scene.views[0]
    dirs = camera_rays(view.intrinsics, view.pose, view.size)

    E, P = 20, 64 * 64
    eid = np.repeat(np.arange(E), P)
    gidx = rng.integers(0, E * P, E * P)
    X = rng.normal(size=(E * P, 3))
    wE = rng.uniform(1, 3, E * P)
    R = np.stack([np.linalg.qr(rng.normal(size=(3, 3)))[0] for _ in range(E)])
    t, s = rng.normal(size=(E, 3)), rng.uniform(0.5, 2, E)
    chiE = rng.normal(size=(E * P, 3))

    return {
        "robust_residuals (200k)": lambda b: kernels.robust_residuals(chi, y, w, backend=b),
        "brute_nn (2048 x 2048)": lambda b: kernels.brute_nn(q, r, backend=b),
        "raycast (96x96 rays)": lambda b: cast(scene.geometry, view.pose.center, dirs, backend=b),
        "edge_residuals (20 edges, 64x64)": lambda b: kernels.edge_residuals(chiE, gidx, X, wE, eid, R, t, s, backend=b),
    }


def _objective_case(scene):
    n = len(scene.views)
    preds = {(a, b): predict_pair(scene, a, b) for a in range(n) for b in range(n) if a != b}
    graph = build_graph(preds)
    params = pinhole_params(initialize_pinhole(graph))
    problems = {b: AlignmentProblem(graph, PINHOLE, backend=b) for b in kernels.available_backends()}
    return lambda b: problems[b].loss_and_grad(params)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the timings as JSON")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    cases = _cases(rng)
    scene5 = generate_scene(default_scene_spec(num_views=5, width=64, height=64, seed=0))
    cases["alignment loss+grad (5 views, 64x64)"] = _objective_case(scene5)

    backends = kernels.available_backends()
    rows = []
    print(f"{'kernel':40s} " + " ".join(f"{b + ' [ms]':>12s}" for b in backends) + f" {'speedup':>9s}")
    for name, fn in cases.items():
        times = {}
        for b in backends:
            fn(b)  # warm up
            times[b] = min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)) * 1e3
        speed = times["numpy"] / times["cython"] if "cython" in times else float("nan")
        rows.append({"kernel": name, **{f"{b}_ms": v for b, v in times.items()}, "speedup": speed})
        print(f"{name:40s} " + " ".join(f"{times[b]:12.3f}" for b in backends) + f" {speed:8.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
