"""Hierarchical graph-based multi-object data association."""

from .core import (
    Detection,
    EmbeddingTable,
    HierarchyConfig,
    HiertrackError,
    Tracklet,
    Trajectory,
    make_tracklet,
)

__version__ = "0.1.0"

__all__ = [
    "Detection",
    "EmbeddingTable",
    "HierarchyConfig",
    "HiertrackError",
    "Tracklet",
    "Trajectory",
    "make_tracklet",
    "__version__",
]
