"""Edge-side visual-inertial odometry for many robots."""

from edge.errors import (
    EdgeError,
    ExcitationTooLowError,
    InertialInitError,
    InsufficientParallaxError,
    SessionSetupError,
)
from edge.local_map import Keyframe, LocalMap, MapPoint
from edge.mapping import LocalMapper
from edge.server import EdgeServer
from edge.vio import FrameOutcome, FrameStatus, InitPhase, InitState, VioSession, global_point_id

__all__ = [
    "EdgeError",
    "EdgeServer",
    "ExcitationTooLowError",
    "FrameOutcome",
    "FrameStatus",
    "InertialInitError",
    "InitPhase",
    "InitState",
    "InsufficientParallaxError",
    "Keyframe",
    "LocalMap",
    "LocalMapper",
    "MapPoint",
    "SessionSetupError",
    "VioSession",
    "global_point_id",
]
