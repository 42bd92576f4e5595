"""Keyframes and map points of one robot's edge session."""

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from cloud.bow import BowVector
from imu.preintegration import Preintegrated
from imu.types import ImuSample, NavState

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class Keyframe:
    """A decoded keyframe with its state T_wc and map associations.

    `point_ids` holds the map point per keypoint (-1 for none). `pre` and
    `imu` cover the interval from `prev_kf_id` to this keyframe.
    """

    kf_id: int
    timestamp: float
    state: NavState
    keypoints: np.ndarray
    levels: np.ndarray
    descriptors: np.ndarray
    words: np.ndarray
    point_ids: np.ndarray
    bow: BowVector = field(default_factory=dict)
    prev_kf_id: int | None = None
    pre: Preintegrated | None = None
    imu: list[ImuSample] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return len(self.keypoints)


@dataclass(eq=False)
class MapPoint:
    point_id: int
    position: np.ndarray
    descriptor: np.ndarray
    observations: dict[int, int] = field(default_factory=dict)


class LocalMap:
    """Bounded local map. Single writer: the owning VIO session."""

    def __init__(self):
        self.keyframes: dict[int, Keyframe] = {}
        self.points: dict[int, MapPoint] = {}
        self._next_point_id = 0

    def __len__(self) -> int:
        return len(self.keyframes)

    @property
    def last_keyframe(self) -> Keyframe | None:
        if not self.keyframes:
            return None
        return self.keyframes[next(reversed(self.keyframes))]

    def add_keyframe(self, kf: Keyframe) -> None:
        if kf.kf_id in self.keyframes:
            raise ValueError(f"Keyframe {kf.kf_id} already in the local map")
        kf.point_ids = np.asarray(kf.point_ids, dtype=np.int64).copy()
        self.keyframes[kf.kf_id] = kf
        for idx, pid in enumerate(kf.point_ids):
            if pid >= 0:
                if pid in self.points:
                    self.points[int(pid)].observations[kf.kf_id] = idx
                else:
                    kf.point_ids[idx] = -1

    def new_point(self, position: np.ndarray, descriptor: np.ndarray) -> MapPoint:
        point = MapPoint(self._next_point_id, np.asarray(position, dtype=float).copy(), descriptor)
        self.points[point.point_id] = point
        self._next_point_id += 1
        return point

    def add_observation(self, point_id: int, kf_id: int, index: int) -> None:
        kf = self.keyframes[kf_id]
        point = self.points[point_id]
        previous = int(kf.point_ids[index])
        if previous >= 0 and previous != point_id:
            self.remove_observation(previous, kf_id)
        old_index = point.observations.get(kf_id)
        if old_index is not None and old_index != index:
            kf.point_ids[old_index] = -1
        kf.point_ids[index] = point_id
        point.observations[kf_id] = index

    def remove_observation(self, point_id: int, kf_id: int) -> None:
        point = self.points.get(point_id)
        if point is None:
            return
        index = point.observations.pop(kf_id, None)
        kf = self.keyframes.get(kf_id)
        if index is not None and kf is not None and kf.point_ids[index] == point_id:
            kf.point_ids[index] = -1

    def remove_point(self, point_id: int) -> None:
        point = self.points.pop(point_id, None)
        if point is None:
            return
        for kf_id, index in point.observations.items():
            kf = self.keyframes.get(kf_id)
            if kf is not None and kf.point_ids[index] == point_id:
                kf.point_ids[index] = -1

    def prune_points(self, min_observations: int = 2) -> int:
        weak = [pid for pid, p in self.points.items() if len(p.observations) < min_observations]
        for pid in weak:
            self.remove_point(pid)
        return len(weak)

    def covisibility(self, kf_id: int) -> Counter:
        """Shared point count with every other keyframe."""
        weights: Counter = Counter()
        for pid in self.keyframes[kf_id].point_ids:
            if pid < 0:
                continue
            for other in self.points[int(pid)].observations:
                if other != kf_id:
                    weights[other] += 1
        return weights

    def recent(self, count: int) -> list[Keyframe]:
        ids = list(self.keyframes)[-count:] if count > 0 else []
        return [self.keyframes[i] for i in ids]

    def positions(self) -> dict[int, np.ndarray]:
        return {pid: p.position for pid, p in self.points.items()}

    def trim(self, cap: int) -> list[int]:
        """Drop the oldest keyframes beyond `cap` and points left with fewer than 2 observations."""
        removed = []
        while len(self.keyframes) > cap:
            kf_id = next(iter(self.keyframes))
            kf = self.keyframes[kf_id]
            for pid in kf.point_ids:
                if pid >= 0 and pid in self.points:
                    self.points[int(pid)].observations.pop(kf_id, None)
            del self.keyframes[kf_id]
            removed.append(kf_id)
        if removed:
            self.prune_points()
            nxt = self.keyframes[next(iter(self.keyframes))] if self.keyframes else None
            if nxt is not None and nxt.prev_kf_id not in self.keyframes:
                nxt.pre = None
            logger.debug(f"[LocalMap] Trimmed keyframes {removed}")
        return removed

    def apply_similarity(self, scale: float, rotation: np.ndarray, translation: np.ndarray) -> None:
        """Map every pose and point through X -> s R X + t; velocities are rotated and scaled."""
        rotation = np.asarray(rotation, dtype=float)
        translation = np.asarray(translation, dtype=float)
        for kf in self.keyframes.values():
            s = kf.state
            kf.state = NavState(
                rotation @ s.rotation,
                scale * rotation @ s.position + translation,
                scale * rotation @ s.velocity,
                s.bias,
            )
        for point in self.points.values():
            point.position = scale * rotation @ point.position + translation

    def check_consistency(self) -> None:
        """Raise AssertionError when an observation and its keyframe disagree."""
        for pid, point in self.points.items():
            for kf_id, index in point.observations.items():
                kf = self.keyframes[kf_id]
                assert 0 <= index < kf.n_features, (pid, kf_id, index)
                assert kf.point_ids[index] == pid, (pid, kf_id, index)
        for kf in self.keyframes.values():
            for index, pid in enumerate(kf.point_ids):
                if pid >= 0:
                    assert self.points[int(pid)].observations.get(kf.kf_id) == index
