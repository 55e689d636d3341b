"""Hot inner loops with a compiled backend and a numpy fallback.

The compiled extension is used when it was built; setting the environment
variable ``PMRECON_PURE_PYTHON=1`` forces the numpy fallback. All callers
go through the wrappers here, which normalize dtypes and memory layout.
"""

import os

import numpy as np

from . import _fallback

_compiled = None
if os.environ.get("PMRECON_PURE_PYTHON", "").strip() not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "numpy"


def _impl(backend):
    if backend is None:
        return _compiled or _fallback
    if backend == "numpy":
        return _fallback
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        return _compiled
    raise ValueError(f"unknown backend {backend!r}")


def available_backends():
    return ["numpy"] + (["cython"] if _compiled is not None else [])


def _f64(a, cols=None):
    a = np.ascontiguousarray(a, dtype=np.float64)
    if cols is not None:
        a = a.reshape(-1, cols)
    return a


def robust_residuals(chi, y, w, zero_tol=0.0, backend=None):
    chi, y = _f64(chi, 3), _f64(y, 3)
    w = _f64(w).reshape(-1)
    if not (len(chi) == len(y) == len(w)):
        raise ValueError("residual inputs differ in length")
    return _impl(backend).robust_residuals(chi, y, w, float(zero_tol))


def brute_nn(query, ref, backend=None):
    return _impl(backend).brute_nn(_f64(query, 3), _f64(ref, 3))


def raycast(origin, dirs, v0, e1, e2, centers, radii, t_min=1e-9, backend=None):
    return _impl(backend).raycast(
        _f64(origin).reshape(3),
        _f64(dirs, 3),
        _f64(v0, 3),
        _f64(e1, 3),
        _f64(e2, 3),
        _f64(centers, 3),
        _f64(radii).reshape(-1),
        float(t_min),
    )


def edge_residuals(chi, gidx, X, w, eid, R, t, s, zero_tol=0.0, need_grad=True, backend=None):
    return _impl(backend).edge_residuals(
        _f64(chi, 3),
        np.ascontiguousarray(gidx, dtype=np.int64),
        _f64(X, 3),
        _f64(w).reshape(-1),
        np.ascontiguousarray(eid, dtype=np.int64),
        _f64(R).reshape(-1, 3, 3),
        _f64(t, 3),
        _f64(s).reshape(-1),
        float(zero_tol),
        bool(need_grad),
    )
