from .noise import NoiseModel, predict_pair
from .scene import (
    BlindCameraError,
    Geometry,
    Scene,
    SceneSpecError,
    View,
    build_geometry,
    camera_rays,
    covisibility,
    default_scene_spec,
    generate_scene,
    look_at,
    make_rng,
    render_view,
    resolved_spec,
)

__all__ = [
    "BlindCameraError",
    "Geometry",
    "NoiseModel",
    "Scene",
    "SceneSpecError",
    "View",
    "build_geometry",
    "camera_rays",
    "covisibility",
    "default_scene_spec",
    "generate_scene",
    "look_at",
    "make_rng",
    "predict_pair",
    "render_view",
    "resolved_spec",
]
