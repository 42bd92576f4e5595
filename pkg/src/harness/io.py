"""Stamped trajectories and their TUM text format (`t tx ty tz qx qy qz qw`)."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from geometry.pose import Pose
from harness.errors import MalformedRowError, MissingFileError

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class StampedTrajectory:
    """Camera poses T_wc with strictly increasing timestamps (seconds)."""

    timestamps: np.ndarray = field(default_factory=lambda: np.zeros(0))
    poses: list[Pose] = field(default_factory=list)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float).reshape(-1)
        if len(self.timestamps) != len(self.poses):
            raise ValueError(f"{len(self.timestamps)} timestamps for {len(self.poses)} poses")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("Trajectory timestamps must be strictly increasing")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[float, Pose]]) -> "StampedTrajectory":
        """Build from (t, pose) pairs in any order; a repeated timestamp keeps the last pose."""
        by_time = {float(t): pose for t, pose in pairs}
        times = sorted(by_time)
        return cls(np.array(times), [by_time[t] for t in times])

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def positions(self) -> np.ndarray:
        if not self.poses:
            return np.zeros((0, 3))
        return np.array([p.translation for p in self.poses])

    @property
    def duration(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0]) if len(self) > 1 else 0.0

    def path_length(self) -> float:
        if len(self) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(self.positions, axis=0), axis=1).sum())

    def transformed(self, transform: Pose, scale: float = 1.0) -> "StampedTrajectory":
        """Apply x -> scale * R x + t to every pose (rotation composed on the left)."""
        poses = [
            Pose(transform.rotation @ p.rotation, scale * transform.rotation @ p.translation + transform.translation)
            for p in self.poses
        ]
        return StampedTrajectory(self.timestamps.copy(), poses)


def write_tum(path: str | Path, trajectory: StampedTrajectory) -> None:
    with open(path, "w") as f:
        for t, pose in zip(trajectory.timestamps, trajectory.poses):
            x, y, z = pose.translation
            qx, qy, qz, qw = pose.quaternion_xyzw()
            f.write(f"{t:.9f} {x:.9f} {y:.9f} {z:.9f} {qx:.9f} {qy:.9f} {qz:.9f} {qw:.9f}\n")
    logger.debug(f"[Io] Wrote {len(trajectory)} poses to {path}")


def read_tum(path: str | Path) -> StampedTrajectory:
    """Read a TUM trajectory; '#' lines and blank lines are skipped.

    Raises:
        MissingFileError: the file does not exist.
        MalformedRowError: a row does not hold eight numbers, or time goes backwards.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(str(path))
    pairs: list[tuple[float, Pose]] = []
    last_t = -np.inf
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.replace(",", " ").split()
            if len(parts) != 8:
                raise MalformedRowError(str(path), line_no, f"expected 8 columns, got {len(parts)}")
            try:
                values = [float(p) for p in parts]
            except ValueError:
                raise MalformedRowError(str(path), line_no, "non-numeric value") from None
            if values[0] <= last_t:
                raise MalformedRowError(str(path), line_no, "timestamps must be strictly increasing")
            last_t = values[0]
            quat = np.array(values[4:8])
            if np.linalg.norm(quat) < 1e-12:
                raise MalformedRowError(str(path), line_no, "zero quaternion")
            pairs.append((values[0], Pose.from_quaternion(quat / np.linalg.norm(quat), np.array(values[1:4]))))
    return StampedTrajectory(np.array([t for t, _ in pairs]), [p for _, p in pairs])
