from .focal import FocalSolveConfig, FocalUnobservableError, estimate_focal, weiszfeld_focal
from .matching import Correspondences, match_points, nearest_neighbors
from .pnp import PoseNotFoundError, RansacConfig, epnp, p3p_four, pnp_ransac
from .pose import TooFewMatchesError, absolute_pose, relative_pose
from .procrustes import DegenerateConfigurationError, procrustes_pose, weighted_procrustes

__all__ = [
    "Correspondences",
    "DegenerateConfigurationError",
    "FocalSolveConfig",
    "FocalUnobservableError",
    "PoseNotFoundError",
    "RansacConfig",
    "TooFewMatchesError",
    "absolute_pose",
    "epnp",
    "estimate_focal",
    "match_points",
    "nearest_neighbors",
    "p3p_four",
    "pnp_ransac",
    "procrustes_pose",
    "relative_pose",
    "weighted_procrustes",
]
