"""Dense 3D reconstruction from pairwise pointmap predictions.

Subpackages
-----------
recovery
    Focal length, relative and absolute camera poses, point matching.
alignment
    Global alignment of a graph of pair predictions.
oracle
    Synthetic ray-cast scenes and corrupted pair predictions for testing.
io
    PMAP, ALN and PLY file formats.
"""

from .geometry import ImageSize, Intrinsics, RigidPose, SimTransform
from .kernels import BACKEND
from .losses import LossConfig, confidence_loss, norm_factor, regression_loss
from .metrics import eval_depth, eval_relative_poses, eval_surface
from .pointmap import (
    ConfidenceMap,
    DepthMap,
    PairPrediction,
    Pointmap,
    change_frame,
    depth_to_pointmap,
    pointmap_to_depth,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConfidenceMap",
    "DepthMap",
    "ImageSize",
    "Intrinsics",
    "LossConfig",
    "PairPrediction",
    "Pointmap",
    "RigidPose",
    "SimTransform",
    "change_frame",
    "confidence_loss",
    "depth_to_pointmap",
    "eval_depth",
    "eval_relative_poses",
    "eval_surface",
    "norm_factor",
    "pointmap_to_depth",
    "regression_loss",
]
