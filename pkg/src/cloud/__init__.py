"""Cloud-side map fusion: global map, loops, merging and global optimization."""

from cloud.bow import BowDatabase, BowVector, bow_similarity, bow_vector
from cloud.errors import CloudError, InsufficientInliersError, UnknownKeyframeError
from cloud.global_map import GlobalKeyframe, GlobalMap, GlobalPoint, LoopEdge

__all__ = [
    "BowDatabase",
    "BowVector",
    "CloudError",
    "GlobalKeyframe",
    "GlobalMap",
    "GlobalPoint",
    "InsufficientInliersError",
    "LoopEdge",
    "UnknownKeyframeError",
    "bow_similarity",
    "bow_vector",
]
