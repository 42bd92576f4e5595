"""Scenarios, datasets, orchestration and evaluation."""

from harness.errors import (
    ComponentError,
    HarnessError,
    InsufficientAssociationError,
    MalformedRowError,
    MissingFileError,
)
from harness.io import StampedTrajectory, read_tum, write_tum
from harness.metrics import align_trajectories, ate_rmse, evaluate_ate

__all__ = [
    "ComponentError",
    "HarnessError",
    "InsufficientAssociationError",
    "MalformedRowError",
    "MissingFileError",
    "StampedTrajectory",
    "align_trajectories",
    "ate_rmse",
    "evaluate_ate",
    "read_tum",
    "write_tum",
]
