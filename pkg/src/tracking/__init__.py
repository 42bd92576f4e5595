"""Feature detection, binary description and IMU-assisted optical-flow tracking."""

from tracking.descriptor import compute_descriptor, describe_keypoints, hamming, hamming_matrix
from tracking.errors import (
    ImageTooSmallError,
    InsufficientCorrespondencesError,
    NoConsensusError,
    PatchOutOfBoundsError,
    PnPDivergenceError,
    TrackingError,
    TrackingLostError,
)
from tracking.features import Keypoint, detect_keypoints
from tracking.flow import Match, MatchStatus, lk_track, predict_keypoints
from tracking.geometric import ransac_filter, screen_by_rotation, solve_pnp
from tracking.image import Pyramid, build_pyramid
from tracking.tracker import TrackerState, TrackingFrame, TrackingLog, TrackResult, imu_assisted_track

__all__ = [
    "ImageTooSmallError",
    "InsufficientCorrespondencesError",
    "Keypoint",
    "Match",
    "MatchStatus",
    "NoConsensusError",
    "PatchOutOfBoundsError",
    "PnPDivergenceError",
    "Pyramid",
    "TrackResult",
    "TrackerState",
    "TrackingError",
    "TrackingFrame",
    "TrackingLog",
    "TrackingLostError",
    "build_pyramid",
    "compute_descriptor",
    "describe_keypoints",
    "detect_keypoints",
    "hamming",
    "hamming_matrix",
    "imu_assisted_track",
    "lk_track",
    "predict_keypoints",
    "ransac_filter",
    "screen_by_rotation",
    "solve_pnp",
]
