"""Perspective-n-point: 4-point hypotheses inside RANSAC, EPnP + Gauss-Newton refit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import Intrinsics, RigidPose
from .procrustes import DegenerateConfigurationError, weighted_procrustes

# smallest/largest principal variance ratio below which a point set is treated as planar
_PLANAR_RATIO = 1e-6
BETA_ITERATIONS = 10


class PoseNotFoundError(RuntimeError):
    pass


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 1024
    inlier_threshold: float = 4.0
    confidence: float = 0.999
    rng_seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be > 0")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie in (0, 1)")


def reprojection_errors(R, t, points3d, pixels, intrinsics: Intrinsics):
    """Pixel distance per correspondence; ``inf`` behind the camera."""
    cam = points3d @ R.T + t
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        proj = intrinsics.project(cam)
        err = np.linalg.norm(proj - pixels, axis=1)
    return np.where(z > 0, err, np.inf)


def _control_points(X):
    c0 = X.mean(axis=0)
    A = X - c0
    evals, evecs = np.linalg.eigh(A.T @ A / len(X))
    order = np.argsort(evals)[::-1]
    evals, evecs = np.maximum(evals[order], 0.0), evecs[:, order]
    planar = evals[2] <= _PLANAR_RATIO * evals[0]
    k = 2 if planar else 3
    if evals[k - 1] <= 1e-300:
        raise DegenerateConfigurationError("degenerate configuration: points are collinear")
    ctrl = [c0] + [c0 + np.sqrt(evals[a]) * evecs[:, a] for a in range(k)]
    return np.array(ctrl)


def _barycentric(X, ctrl):
    B = (ctrl[1:] - ctrl[0]).T
    if B.shape[1] == 2:
        rest = np.linalg.lstsq(B, (X - ctrl[0]).T, rcond=None)[0].T
    else:
        rest = np.linalg.solve(B, (X - ctrl[0]).T).T
    return np.hstack([1.0 - rest.sum(axis=1, keepdims=True), rest])


def _pair_indices(nc):
    return [(a, b) for a in range(nc) for b in range(a + 1, nc)]


def _beta_products(nb):
    """Index pairs ``(a, b)`` of the quadratic beta monomials, ``a <= b``."""
    return [(a, b) for b in range(nb) for a in range(b + 1)]


def _solve_betas(null, ctrl, nb):
    """Candidate beta vectors from linearizations plus Gauss-Newton polishing."""
    nc = len(ctrl)
    pairs = _pair_indices(nc)
    prods = _beta_products(nb)
    rho = np.array([np.sum((ctrl[a] - ctrl[b]) ** 2) for a, b in pairs])
    V = null.reshape(nb, nc, 3)
    dv = np.array([[V[k, a] - V[k, b] for k in range(nb)] for a, b in pairs])  # (P, nb, 3)
    L = np.empty((len(pairs), len(prods)))
    for c, (a, b) in enumerate(prods):
        L[:, c] = np.sum(dv[:, a] * dv[:, b], axis=1) * (1.0 if a == b else 2.0)
    col = {p: c for c, p in enumerate(prods)}

    def lin_solve(cols):
        return np.linalg.lstsq(L[:, cols], rho, rcond=None)[0]

    candidates = []
    # N = 1 style: B11, B12, B13, ... (products with the first null vector)
    cols = [col[(0, k)] for k in range(nb)]
    b = lin_solve(cols)
    beta = np.zeros(nb)
    if b[0] < 0:
        beta[0] = np.sqrt(-b[0])
        beta[1:] = -b[1:] / beta[0]
    elif b[0] > 0:
        beta[0] = np.sqrt(b[0])
        beta[1:] = b[1:] / beta[0]
    candidates.append(beta)
    if nb >= 2:
        b = lin_solve([col[(0, 0)], col[(0, 1)], col[(1, 1)]])
        beta = np.zeros(nb)
        if b[0] < 0:
            beta[0] = np.sqrt(-b[0])
            beta[1] = np.sqrt(-b[2]) if b[2] < 0 else 0.0
        else:
            beta[0] = np.sqrt(b[0])
            beta[1] = np.sqrt(b[2]) if b[2] > 0 else 0.0
        if b[1] < 0:
            beta[0] = -beta[0]
        candidates.append(beta)
    if nb >= 3 and len(pairs) >= 5:
        b = lin_solve([col[(0, 0)], col[(0, 1)], col[(1, 1)], col[(0, 2)], col[(1, 2)]])
        beta = np.zeros(nb)
        if b[0] < 0:
            beta[0] = np.sqrt(-b[0])
            beta[1] = np.sqrt(-b[2]) if b[2] < 0 else 0.0
        else:
            beta[0] = np.sqrt(b[0])
            beta[1] = np.sqrt(b[2]) if b[2] > 0 else 0.0
        if b[1] < 0:
            beta[0] = -beta[0]
        beta[2] = b[3] / beta[0] if beta[0] != 0 else 0.0
        candidates.append(beta)

    polished = []
    for beta in candidates:
        beta = beta.copy()
        for _ in range(BETA_ITERATIONS):
            prod = np.array([beta[a] * beta[b] for a, b in prods])
            r = rho - L @ prod
            J = np.zeros((len(pairs), nb))
            for c, (a, b) in enumerate(prods):
                J[:, a] += L[:, c] * beta[b]
                J[:, b] += L[:, c] * beta[a]
            step = np.linalg.lstsq(J, r, rcond=None)[0]
            beta = beta + step
        polished.append(beta)
    return polished, V


def epnp(points3d, pixels, intrinsics: Intrinsics):
    """EPnP pose estimate for ``n >= 4`` correspondences.

    Handles general and planar point layouts. Returns ``(R, t)`` of the
    world-to-camera transform with the smallest mean reprojection error
    among the candidate linearizations.
    """
    X = np.asarray(points3d, dtype=np.float64).reshape(-1, 3)
    uv = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    if len(X) < 4:
        raise ValueError(f"PnP needs at least 4 correspondences, got {len(X)}")
    ctrl = _control_points(X)
    alphas = _barycentric(X, ctrl)
    nc = len(ctrl)
    f = intrinsics.focal
    cx, cy = intrinsics.principal_point
    M = np.zeros((2 * len(X), 3 * nc))
    for k in range(nc):
        M[0::2, 3 * k] = alphas[:, k] * f
        M[0::2, 3 * k + 2] = alphas[:, k] * (cx - uv[:, 0])
        M[1::2, 3 * k + 1] = alphas[:, k] * f
        M[1::2, 3 * k + 2] = alphas[:, k] * (cy - uv[:, 1])
    _, evecs = np.linalg.eigh(M.T @ M)
    nb = 4 if nc == 4 else 3
    null = evecs[:, :nb].T  # ascending eigenvalues: first column is the best null vector
    betas, V = _solve_betas(null, ctrl, nb)

    best = None
    for beta in betas:
        ccs = np.tensordot(beta, V, axes=1)
        pcs = alphas @ ccs
        if pcs[:, 2].mean() < 0:
            pcs = -pcs
        try:
            _, R, t = weighted_procrustes(X, pcs, with_scale=False)
        except DegenerateConfigurationError:
            continue
        err = reprojection_errors(R, t, X, uv, intrinsics)
        score = float(np.mean(err))
        if best is None or score < best[0]:
            best = (score, R, t)
    if best is None:
        raise DegenerateConfigurationError("degenerate configuration: EPnP produced no pose")
    return best[1], best[2]


def p3p_four(points3d, pixels, intrinsics: Intrinsics):
    """Minimal pose from 4 correspondences.

    Grunert's three-point solution on the first three points yields up to
    four poses; the fourth point picks the one with the smallest
    reprojection error.
    """
    X = np.asarray(points3d, dtype=np.float64).reshape(-1, 3)
    uv = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    if len(X) != 4:
        raise ValueError("p3p_four takes exactly 4 correspondences")
    cx, cy = intrinsics.principal_point
    rays = np.column_stack([(uv[:, 0] - cx) / intrinsics.focal, (uv[:, 1] - cy) / intrinsics.focal, np.ones(4)])
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)
    best = None
    for R, t in _grunert(X[:3], rays[:3]):
        err = reprojection_errors(R, t, X, uv, intrinsics)
        score = float(np.sum(err))
        if np.isfinite(score) and (best is None or score < best[0]):
            best = (score, R, t)
    if best is None:
        raise DegenerateConfigurationError("degenerate configuration: P3P has no valid solution")
    return best[1], best[2]


def _grunert(X, j):
    a2 = np.sum((X[1] - X[2]) ** 2)
    b2 = np.sum((X[0] - X[2]) ** 2)
    c2 = np.sum((X[0] - X[1]) ** 2)
    if min(a2, b2, c2) <= 0:
        return []
    ca, cb, cg = j[1] @ j[2], j[0] @ j[2], j[0] @ j[1]
    p = (a2 - c2) / b2
    q = (a2 + c2) / b2
    A4 = (p - 1) ** 2 - 4 * c2 / b2 * ca**2
    A3 = 4 * (p * (1 - p) * cb - (1 - q) * ca * cg + 2 * c2 / b2 * ca**2 * cb)
    A2 = 2 * (p**2 - 1 + 2 * p**2 * cb**2 + 2 * (b2 - c2) / b2 * ca**2 - 4 * q * ca * cb * cg + 2 * (b2 - a2) / b2 * cg**2)
    A1 = 4 * (-p * (1 + p) * cb + 2 * a2 / b2 * cg**2 * cb - (1 - q) * ca * cg)
    A0 = (1 + p) ** 2 - 4 * a2 / b2 * cg**2
    coeffs = np.array([A4, A3, A2, A1, A0])
    if not np.all(np.isfinite(coeffs)) or abs(A4) < 1e-300:
        return []
    poly = np.polynomial.Polynomial(coeffs[::-1])
    dpoly = poly.deriv()
    out = []
    for root in np.roots(coeffs):
        if abs(root.imag) > 1e-6 * max(1.0, abs(root.real)):
            continue
        v = root.real
        for _ in range(3):  # Newton polish of the real root
            d = dpoly(v)
            if d == 0:
                break
            v -= poly(v) / d
        if v <= 0:
            continue
        denom = 2 * (cg - v * ca)
        if abs(denom) < 1e-15:
            continue
        u = ((p - 1) * v**2 - 2 * p * cb * v + 1 + p) / denom
        s1sq = b2 / (1 + v**2 - 2 * v * cb)
        if u <= 0 or s1sq <= 0:
            continue
        s1 = np.sqrt(s1sq)
        cam = np.array([s1 * j[0], u * s1 * j[1], v * s1 * j[2]])
        try:
            _, R, t = weighted_procrustes(X, cam, with_scale=False)
        except DegenerateConfigurationError:
            continue
        out.append((R, t))
    return out


def _skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _exp_so3(w):
    theta = np.linalg.norm(w)
    K = _skew(w)
    if theta < 1e-12:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + np.sin(theta) / theta * K + (1 - np.cos(theta)) / theta**2 * K @ K


def refine_pose(R, t, points3d, pixels, intrinsics: Intrinsics, iterations=20, weights=None):
    """Gauss-Newton (Levenberg damped) on squared reprojection residuals.

    ``weights`` optionally scales each correspondence's squared residual.
    """
    X = np.asarray(points3d, dtype=np.float64)
    uv = np.asarray(pixels, dtype=np.float64)
    sw = np.ones(len(X)) if weights is None else np.sqrt(np.asarray(weights, dtype=np.float64))
    sw = np.concatenate([sw, sw])
    f = intrinsics.focal
    cx, cy = intrinsics.principal_point

    def cost(R, t):
        cam = X @ R.T + t
        if np.any(cam[:, 2] <= 0):
            return np.inf, None, None
        r = np.concatenate([f * cam[:, 0] / cam[:, 2] + cx - uv[:, 0], f * cam[:, 1] / cam[:, 2] + cy - uv[:, 1]])
        r *= sw
        return float(r @ r), r, cam

    c, r, cam = cost(R, t)
    if not np.isfinite(c):
        return R, t
    lam = 1e-6
    n = len(X)
    for _ in range(iterations):
        x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
        J = np.zeros((2 * n, 6))
        du = np.stack([f / z, np.zeros(n), -f * x / z**2], axis=1)
        dv = np.stack([np.zeros(n), f / z, -f * y / z**2], axis=1)
        # left perturbation of the whole pose, cam <- exp(w) cam + dt: d(cam)/dw = w x cam
        for k, e in enumerate(np.eye(3)):
            dcam = np.cross(e, cam)
            J[:n, k] = np.sum(du * dcam, axis=1)
            J[n:, k] = np.sum(dv * dcam, axis=1)
        J[:n, 3:] = du
        J[n:, 3:] = dv
        J *= sw[:, None]
        H = J.T @ J
        g = J.T @ r
        improved = False
        for _ in range(10):
            step = -np.linalg.solve(H + lam * np.diag(np.diag(H) + 1e-12), g)
            R_new = _exp_so3(step[:3]) @ R
            t_new = _exp_so3(step[:3]) @ t + step[3:]
            c_new, r_new, cam_new = cost(R_new, t_new)
            if c_new <= c:
                R, t, c, r, cam = R_new, t_new, c_new, r_new, cam_new
                lam = max(lam * 0.1, 1e-12)
                improved = True
                break
            lam *= 10.0
        if not improved or np.linalg.norm(step) < 1e-15:
            break
    return R, t


def _required_iterations(inlier_ratio, confidence, sample_size=4):
    if inlier_ratio >= 1.0:
        return 0
    good = inlier_ratio**sample_size
    if good <= 0:
        return np.inf
    return np.log(1.0 - confidence) / np.log(1.0 - good)


def pnp_ransac(corr_2d, corr_3d, intrinsics: Intrinsics, cfg: RansacConfig = RansacConfig()):
    """Robust world-to-camera pose from 2D-3D correspondences.

    Returns ``(RigidPose, inlier_mask)``. The result depends only on the
    inputs and ``cfg.rng_seed``.
    """
    uv = np.asarray(corr_2d, dtype=np.float64).reshape(-1, 2)
    X = np.asarray(corr_3d, dtype=np.float64).reshape(-1, 3)
    n = len(uv)
    if n != len(X):
        raise ValueError("2D and 3D correspondence counts differ")
    if n < 4:
        raise ValueError(f"PnP needs at least 4 correspondences, got {n}")
    rng = np.random.Generator(np.random.Philox(cfg.rng_seed))
    best_count, best_mask = 0, None
    needed = np.inf
    it = 0
    while it < min(cfg.max_iterations, needed):
        sample = rng.choice(n, size=4, replace=False)
        it += 1
        try:
            R, t = p3p_four(X[sample], uv[sample], intrinsics)
        except (DegenerateConfigurationError, np.linalg.LinAlgError):
            continue
        mask = reprojection_errors(R, t, X, uv, intrinsics) < cfg.inlier_threshold
        count = int(mask.sum())
        # strict improvement only: the earliest hypothesis wins ties
        if count > best_count:
            best_count, best_mask = count, mask
            needed = _required_iterations(count / n, cfg.confidence)
    if best_mask is None or best_count < 4:
        raise PoseNotFoundError("pose not found: no hypothesis reached 4 inliers")

    mask = best_mask
    for _ in range(3):
        R, t = epnp(X[mask], uv[mask], intrinsics)
        R, t = refine_pose(R, t, X[mask], uv[mask], intrinsics)
        new_mask = reprojection_errors(R, t, X, uv, intrinsics) < cfg.inlier_threshold
        if new_mask.sum() < 4 or np.array_equal(new_mask, mask):
            break
        mask = new_mask
    R, t = _robust_refine(R, t, X[mask], uv[mask], intrinsics)
    return RigidPose.from_matrix(R, t), reprojection_errors(R, t, X, uv, intrinsics) < cfg.inlier_threshold


def _robust_refine(R, t, X, uv, intrinsics, rounds=8, min_scale=1e-3):
    """Cauchy-weighted refinement of an inlier set.

    Outliers that happen to reproject inside the RANSAC threshold would
    otherwise bias the least-squares pose. The Cauchy scale is the robust
    (MAD) spread of the current residuals, floored at ``min_scale`` pixels,
    so noisy data keeps nearly uniform weights.
    """
    for _ in range(rounds):
        err = reprojection_errors(R, t, X, uv, intrinsics)
        if not np.all(np.isfinite(err)):
            break
        scale = max(1.4826 * float(np.median(err)), min_scale)
        R, t = refine_pose(R, t, X, uv, intrinsics, weights=1.0 / (1.0 + (err / scale) ** 2))
    return R, t
