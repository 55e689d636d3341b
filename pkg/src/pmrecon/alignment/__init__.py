from .aggregate import aggregate_depths, lower_median
from .graph import DisconnectedGraphError, Edge, SceneGraph, build_graph
from .objective import FREE, PINHOLE, AlignmentProblem
from .solver import (
    AlignConfig,
    AlignmentDivergedError,
    AlignmentResult,
    IncompleteGraphError,
    PinholeInit,
    align_free,
    align_pinhole,
    initialize_pinhole,
    pinhole_params,
    run_descent,
)

__all__ = [
    "FREE",
    "PINHOLE",
    "AlignConfig",
    "AlignmentDivergedError",
    "AlignmentProblem",
    "AlignmentResult",
    "DisconnectedGraphError",
    "Edge",
    "IncompleteGraphError",
    "PinholeInit",
    "SceneGraph",
    "aggregate_depths",
    "align_free",
    "align_pinhole",
    "build_graph",
    "initialize_pinhole",
    "lower_median",
    "pinhole_params",
    "run_descent",
]
