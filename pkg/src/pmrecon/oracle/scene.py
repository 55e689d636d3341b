"""Synthetic scenes with exact ray-cast depth, standing in for network output.

Random streams use numpy's counter-based Philox4x64-10 bit generator,
seeded through ``SeedSequence``; every output is a pure function of the
scene spec and seed.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..geometry import ImageSize, Intrinsics, RigidPose, matrix_to_quat
from ..pointmap import DepthMap, pixel_grid


class BlindCameraError(ValueError):
    pass


class SceneSpecError(ValueError):
    pass


def make_rng(*key):
    """Philox generator keyed by a tuple of non-negative integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


@dataclass(frozen=True, eq=False)
class Geometry:
    """Triangles ``(T, 3, 3)`` and spheres ``(S, 3)`` centers / ``(S,)`` radii."""

    triangles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3, 3)))
    sphere_centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    sphere_radii: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def num_primitives(self):
        return len(self.triangles) + len(self.sphere_radii)

    def centroid(self):
        pts = [self.triangles.reshape(-1, 3), self.sphere_centers]
        pts = np.concatenate([p for p in pts if len(p)])
        return pts.mean(axis=0)

    def bounds(self):
        lo = [self.triangles.reshape(-1, 3).min(axis=0)] if len(self.triangles) else []
        hi = [self.triangles.reshape(-1, 3).max(axis=0)] if len(self.triangles) else []
        if len(self.sphere_radii):
            lo.append((self.sphere_centers - self.sphere_radii[:, None]).min(axis=0))
            hi.append((self.sphere_centers + self.sphere_radii[:, None]).max(axis=0))
        return np.min(lo, axis=0), np.max(hi, axis=0)


@dataclass(frozen=True, eq=False)
class View:
    intrinsics: Intrinsics
    pose: RigidPose
    size: ImageSize
    depth: DepthMap
    primitive: np.ndarray  # (H, W) id of the surface hit per pixel, -1 on miss


@dataclass(frozen=True, eq=False)
class Scene:
    views: list[View]
    geometry: Geometry
    seed: int
    spec: dict

    @property
    def scale(self):
        """Reference length: mean camera-to-centroid distance."""
        c = self.geometry.centroid()
        return float(np.mean([np.linalg.norm(v.pose.center - c) for v in self.views]))


def _rect_triangles(center, u, v):
    c, u, v = (np.asarray(a, dtype=np.float64) for a in (center, u, v))
    p00, p10, p11, p01 = c - u - v, c + u - v, c + u + v, c - u + v
    return [np.array([p00, p10, p11]), np.array([p00, p11, p01])]


def _box_triangles(center, half):
    c = np.asarray(center, dtype=np.float64)
    h = np.asarray(half, dtype=np.float64)
    ex, ey, ez = np.diag(h)
    tris = []
    for n_, a, b in ((ex, ey, ez), (ey, ez, ex), (ez, ex, ey)):
        tris += _rect_triangles(c + n_, a, b)
        tris += _rect_triangles(c - n_, b, a)
    return tris


def build_geometry(primitives) -> Geometry:
    """Geometry from primitive dicts.

    Supported types: ``sphere`` (center, radius), ``plane`` (a rectangle:
    center and two half-extent vectors ``u``, ``v``), ``box`` (center,
    half extents), ``triangle`` (vertices) and ``mesh`` (vertices, faces).
    """
    tris, centers, radii = [], [], []
    for k, prim in enumerate(primitives):
        kind = prim.get("type")
        try:
            if kind == "sphere":
                if not prim["radius"] > 0:
                    raise SceneSpecError(f"primitive {k}: sphere radius must be positive")
                centers.append(np.asarray(prim["center"], dtype=np.float64))
                radii.append(float(prim["radius"]))
            elif kind == "plane":
                tris += _rect_triangles(prim["center"], prim["u"], prim["v"])
            elif kind == "box":
                tris += _box_triangles(prim["center"], prim["half_extents"])
            elif kind == "triangle":
                tris.append(np.asarray(prim["vertices"], dtype=np.float64).reshape(3, 3))
            elif kind == "mesh":
                verts = np.asarray(prim["vertices"], dtype=np.float64).reshape(-1, 3)
                faces = np.asarray(prim["faces"], dtype=np.int64).reshape(-1, 3)
                tris += list(verts[faces])
            else:
                raise SceneSpecError(f"primitive {k}: unknown type {kind!r}")
        except KeyError as exc:
            raise SceneSpecError(f"primitive {k} ({kind}): missing field {exc}") from None
    if len(tris) > 10_000:
        raise SceneSpecError(f"too many triangles ({len(tris)} > 10000)")
    if not tris and not radii:
        raise SceneSpecError("scene has no geometry")
    return Geometry(
        np.array(tris, dtype=np.float64).reshape(-1, 3, 3),
        np.array(centers, dtype=np.float64).reshape(-1, 3),
        np.array(radii, dtype=np.float64),
    )


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> RigidPose:
    """World-to-camera pose of a camera at ``position`` looking at ``target``.

    Camera axes: x right, y down (image rows), z forward.
    """
    c = np.asarray(position, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - c
    z /= np.linalg.norm(z)
    up = np.asarray(up, dtype=np.float64)
    y = -(up - (up @ z) * z)
    ny = np.linalg.norm(y)
    if ny < 1e-9:
        raise SceneSpecError("camera up vector is parallel to the viewing direction")
    y /= ny
    x = np.cross(y, z)
    R = np.stack([x, y, z])
    return RigidPose(matrix_to_quat(R), -R @ c)


def camera_rays(intrinsics: Intrinsics, pose: RigidPose, size: ImageSize):
    """World-frame ray directions ``(H*W, 3)`` scaled so their camera z is 1.

    The hit parameter along such a ray is directly the pixel's depth.
    """
    u, v = pixel_grid(size)
    cx, cy = intrinsics.principal_point
    d_cam = np.stack([(u - cx) / intrinsics.focal, (v - cy) / intrinsics.focal, np.ones_like(u)], axis=-1)
    return d_cam.reshape(-1, 3) @ pose.R


def cast(geometry: Geometry, origin, dirs, backend=None):
    tris = geometry.triangles
    return kernels.raycast(
        origin,
        dirs,
        tris[:, 0],
        tris[:, 1] - tris[:, 0],
        tris[:, 2] - tris[:, 0],
        geometry.sphere_centers,
        geometry.sphere_radii,
        backend=backend,
    )


def render_view(geometry: Geometry, intrinsics: Intrinsics, pose: RigidPose, size: ImageSize, backend=None) -> View:
    t, prim = cast(geometry, pose.center, camera_rays(intrinsics, pose, size), backend=backend)
    hit = np.isfinite(t)
    depth = DepthMap(np.where(hit, t, 0.0).reshape(size.shape), hit.reshape(size.shape))
    return View(intrinsics, pose, size, depth, prim.reshape(size.shape))


def _sample(value, rng):
    if isinstance(value, (list, tuple)):
        lo, hi = value
        return float(rng.uniform(lo, hi))
    return float(value)


def _resolve_cameras(spec, geometry, seed):
    size = ImageSize(spec.get("width", 64), spec.get("height", 64))
    cams = []
    if "cameras" in spec:
        for k, cam in enumerate(spec["cameras"]):
            focal = float(cam.get("focal", spec.get("focal", size.width)))
            if "pose" in cam:
                pose = RigidPose(cam["pose"]["q"], cam["pose"]["t"])
            else:
                pose = look_at(cam["position"], cam.get("look_at", geometry.centroid()), cam.get("up", (0, 0, 1)))
            cams.append((Intrinsics.centered(focal, size), pose))
        return size, cams

    n = int(spec.get("num_views", 2))
    if n < 1:
        raise SceneSpecError("at least one view is required")
    orbit = spec.get("orbit", {})
    rng = make_rng(seed, 1)
    target = np.asarray(orbit.get("target", geometry.centroid()), dtype=np.float64)
    radius = float(orbit.get("radius", 6.0))
    span = np.radians(float(orbit.get("azimuth_span", 90.0)))
    az0 = np.radians(float(orbit.get("azimuth_start", -45.0)))
    for k in range(n):
        frac = 0.5 if n == 1 else k / (n - 1)
        az = az0 + span * frac + np.radians(float(orbit.get("azimuth_jitter", 5.0))) * rng.uniform(-1, 1)
        el = np.radians(_sample(orbit.get("elevation", [20.0, 40.0]), rng))
        r = radius * (1.0 + float(orbit.get("radius_jitter", 0.1)) * rng.uniform(-1, 1))
        pos = target + r * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        aim = target + float(orbit.get("look_jitter", 0.2)) * rng.uniform(-1, 1, size=3)
        focal = _sample(spec.get("focal", [0.9 * size.width, 1.2 * size.width]), rng)
        cams.append((Intrinsics.centered(focal, size), look_at(pos, aim)))
    return size, cams


DEFAULT_PRIMITIVES = [
    {"type": "plane", "center": [0.0, 0.0, 0.0], "u": [6.0, 0.0, 0.0], "v": [0.0, 6.0, 0.0]},
    {"type": "plane", "center": [-3.0, 0.0, 2.0], "u": [0.0, 6.0, 0.0], "v": [0.0, 0.0, 2.0]},
    {"type": "sphere", "center": [0.4, 0.3, 0.8], "radius": 0.8},
    {"type": "sphere", "center": [-1.0, -1.2, 0.5], "radius": 0.5},
    {"type": "box", "center": [-0.6, 1.3, 0.6], "half_extents": [0.5, 0.4, 0.6]},
    {"type": "sphere", "center": [1.5, -1.0, 0.35], "radius": 0.35},
]


def default_scene_spec(num_views=5, width=64, height=64, seed=0):
    """Ground, back wall, spheres and a box seen from an orbit around them."""
    return {
        "width": width,
        "height": height,
        "num_views": num_views,
        "seed": seed,
        "focal": [0.9 * width, 1.2 * width],
        "orbit": {"radius": 6.0, "elevation": [25.0, 40.0], "azimuth_span": 80.0, "azimuth_start": -40.0},
        "primitives": copy.deepcopy(DEFAULT_PRIMITIVES),
    }


def generate_scene(spec: dict, seed: int | None = None, backend=None) -> Scene:
    """Ray-cast every view of a scene spec.

    Raises :class:`BlindCameraError` when a view sees no geometry.
    """
    spec = copy.deepcopy(spec)
    seed = int(spec.get("seed", 0) if seed is None else seed)
    spec["seed"] = seed
    if "primitives" not in spec:
        raise SceneSpecError("scene spec needs a 'primitives' list")
    geometry = build_geometry(spec["primitives"])
    size, cams = _resolve_cameras(spec, geometry, seed)
    views = []
    for k, (K, pose) in enumerate(cams):
        view = render_view(geometry, K, pose, size, backend=backend)
        if not view.depth.valid.any():
            raise BlindCameraError(f"blind camera: view {k} sees no geometry")
        views.append(view)
    return Scene(views, geometry, seed, spec)


def resolved_spec(scene: Scene) -> dict:
    """The scene spec with every camera made explicit, for exact replay."""
    spec = copy.deepcopy(scene.spec)
    spec.pop("num_views", None)
    spec.pop("orbit", None)
    spec["cameras"] = [
        {
            "focal": v.intrinsics.focal,
            "pose": {"q": v.pose.rotation.tolist(), "t": v.pose.translation.tolist()},
        }
        for v in scene.views
    ]
    return spec


def covisibility(scene: Scene, n: int, m: int, rtol=1e-7) -> np.ndarray:
    """Pixels of view ``n`` whose surface point is also seen by view ``m``."""
    vn, vm = scene.views[n], scene.views[m]
    rays = camera_rays(vn.intrinsics, vn.pose, vn.size)
    world = vn.pose.center + rays * vn.depth.depth.reshape(-1, 1)
    cam_m = vm.pose.apply(world)
    z = cam_m[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = vm.intrinsics.project(cam_m)
        inside = (z > 0) & (uv[:, 0] >= 0) & (uv[:, 0] <= vm.size.width - 1) & (uv[:, 1] >= 0)
        inside &= uv[:, 1] <= vm.size.height - 1
        dirs = np.where(inside[:, None], cam_m / z[:, None], 0.0) @ vm.pose.R
    t, _ = cast(scene.geometry, vm.pose.center, dirs)
    seen = inside & vn.depth.valid.ravel() & (t >= z * (1 - rtol))
    return seen.reshape(vn.size.shape)
