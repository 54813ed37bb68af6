"""Fixed-size boundary graph topologies."""

from .edges import EdgeTensor, edge_tensor
from .graph import GraphTopology, LevelGraph, landmark_count, resolution_counts
from .independent import build_independent, circular_pooling
from .unified import build_unified, coarsen_unified, merge_contours, resample_closed

__all__ = [
    "EdgeTensor",
    "GraphTopology",
    "LevelGraph",
    "build_independent",
    "build_unified",
    "circular_pooling",
    "coarsen_unified",
    "edge_tensor",
    "landmark_count",
    "merge_contours",
    "resample_closed",
    "resolution_counts",
]
