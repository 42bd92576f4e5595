"""The cloud's global map: keyframes of every robot, fused map points and loop edges.

Each robot's keyframes start in their own component, anchored by a gauge
prior on the robot's first keyframe. Merging joins components; every
component keeps exactly one anchor. Per robot the map keeps two transforms
from the edge world frame into the component frame: `frame_alignment`
changes only when the component is moved by a merge, `drift_alignment`
also absorbs global corrections and places newly arriving keyframes.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from cloud.bow import BowDatabase, BowVector, bow_vector
from cloud.errors import UnknownKeyframeError
from geometry.pose import Pose
from imu.errors import ImuError
from imu.preintegration import Preintegrated, preintegrate
from imu.types import ImuSample, NavState
from wire.payloads import KeyframeRecord, MapPointUpdate

logger = logging.getLogger(__name__)

KfKey = tuple[int, int]


def transform_state(T: Pose, state: NavState) -> NavState:
    """Move a T_wc state by a rigid world change T."""
    return NavState(
        T.rotation @ state.rotation,
        T.act(state.position),
        T.rotation @ state.velocity,
        state.bias,
    )


@dataclass(eq=False)
class GlobalKeyframe:
    """A keyframe in its component's world frame.

    Virtual keyframes created by backbone profiling carry, per keypoint, the
    offset T_anchor_camera of the keyframe the observation came from.
    """

    key: KfKey
    timestamp: float
    state: NavState
    edge_pose: Pose
    keypoints: np.ndarray
    levels: np.ndarray
    descriptors: np.ndarray
    words: np.ndarray
    point_ids: np.ndarray
    bow: BowVector = field(default_factory=dict)
    imu: list[ImuSample] = field(default_factory=list)
    pre: Preintegrated | None = None
    prev_key: KfKey | None = None
    virtual: bool = False
    offsets: list[Pose | None] | None = None

    @property
    def robot_id(self) -> int:
        return self.key[0]

    @property
    def pose(self) -> Pose:
        return self.state.pose

    def offset(self, index: int) -> Pose | None:
        return self.offsets[index] if self.offsets is not None else None


@dataclass(eq=False)
class GlobalPoint:
    point_id: int
    position: np.ndarray
    descriptor: np.ndarray
    observations: dict[KfKey, int] = field(default_factory=dict)
    optimized: bool = False


@dataclass(frozen=True)
class LoopEdge:
    query: KfKey
    candidate: KfKey
    relative: Pose  # T_qc = T_wq^-1 T_wc
    inliers: int

    @property
    def inter_robot(self) -> bool:
        return self.query[0] != self.candidate[0]


class GlobalMap:
    """Mutated only by the cloud server's job loop."""

    def __init__(self):
        self.keyframes: dict[KfKey, GlobalKeyframe] = {}
        self.points: dict[int, GlobalPoint] = {}
        self.loops: list[LoopEdge] = []
        self.database = BowDatabase()
        self.anchors: dict[int, KfKey] = {}
        self.frame_alignment: dict[int, Pose] = {}
        self.drift_alignment: dict[int, Pose] = {}
        self.aliases: dict[int, int] = {}
        self.last_key: dict[int, KfKey] = {}
        self._parent: dict[int, int] = {}
        self._virtual_ids: dict[int, int] = {}

    def __len__(self) -> int:
        return len(self.keyframes)

    def __contains__(self, key: KfKey) -> bool:
        return key in self.keyframes

    def __getitem__(self, key: KfKey) -> GlobalKeyframe:
        try:
            return self.keyframes[key]
        except KeyError:
            raise UnknownKeyframeError(key) from None

    # -- components -------------------------------------------------------

    def component(self, robot_id: int) -> int:
        root = robot_id
        while self._parent.get(root, root) != root:
            root = self._parent[root]
        while self._parent.get(robot_id, robot_id) != root:
            self._parent[robot_id], robot_id = root, self._parent[robot_id]
        return root

    def same_component(self, a: KfKey, b: KfKey) -> bool:
        return self.component(a[0]) == self.component(b[0])

    def robots(self) -> list[int]:
        return sorted(self._parent)

    def robots_in(self, root: int) -> list[int]:
        return [r for r in self.robots() if self.component(r) == root]

    def components(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for r in self.robots():
            out.setdefault(self.component(r), []).append(r)
        return out

    def keyframes_of(self, robots: list[int] | int) -> list[GlobalKeyframe]:
        wanted = {robots} if isinstance(robots, int) else set(robots)
        return [kf for kf in self.keyframes.values() if kf.robot_id in wanted]

    def component_size(self, root: int) -> int:
        return len(self.keyframes_of(self.robots_in(root)))

    def union(self, keep_root: int, absorbed_root: int) -> None:
        """Join two components; the absorbed component's gauge prior is dropped."""
        keep_root, absorbed_root = self.component(keep_root), self.component(absorbed_root)
        if keep_root == absorbed_root:
            return
        self._parent[absorbed_root] = keep_root
        self.anchors.pop(absorbed_root, None)

    def anchor_keys(self) -> set[KfKey]:
        return set(self.anchors.values())

    # -- insertion ----------------------------------------------------------

    def resolve(self, point_id: int) -> int:
        while point_id in self.aliases:
            point_id = self.aliases[point_id]
        return point_id

    def add_keyframe(self, robot_id: int, record: KeyframeRecord) -> GlobalKeyframe:
        """Insert an edge keyframe, placing it with the robot's current drift alignment."""
        key = (robot_id, int(record.kf_id))
        if key in self.keyframes:
            logger.warning(f"[Cloud] Keyframe {key} received twice; keeping the first copy")
            return self.keyframes[key]
        if robot_id not in self._parent:
            self._parent[robot_id] = robot_id
            self.frame_alignment[robot_id] = Pose.identity()
            self.drift_alignment[robot_id] = Pose.identity()
            self.anchors[robot_id] = key
            logger.info(f"[Cloud] Robot {robot_id} joins with keyframe {record.kf_id} as its gauge anchor")
        T = self.drift_alignment[robot_id]
        state = transform_state(T, record.state)
        prev_key = self.last_key.get(robot_id)
        if prev_key is not None and prev_key not in self.keyframes:
            prev_key = None
        pre = None
        if prev_key is not None and record.imu:
            try:
                pre = preintegrate(record.imu, state.bias, t_end=record.timestamp)
            except ImuError as e:
                logger.debug(f"[Cloud] Keyframe {key} has no usable IMU link: {e}")
        kf = GlobalKeyframe(
            key=key,
            timestamp=float(record.timestamp),
            state=state,
            edge_pose=record.state.pose,
            keypoints=np.asarray(record.keypoints, dtype=float),
            levels=np.asarray(record.levels, dtype=int),
            descriptors=np.asarray(record.descriptors, dtype=np.uint8),
            words=np.asarray(record.words, dtype=np.int64),
            point_ids=np.full(len(record.keypoints), -1, dtype=np.int64),
            bow=bow_vector(record.words),
            imu=list(record.imu),
            pre=pre,
            prev_key=prev_key,
        )
        self.keyframes[key] = kf
        self.last_key[robot_id] = key
        for index, gid in enumerate(record.point_ids):
            if gid < 0:
                continue
            pid = self.resolve(int(gid))
            point = self.points.get(pid)
            position = record.points.get(int(gid))
            if point is None:
                if position is None:
                    continue
                point = GlobalPoint(pid, T.act(position), kf.descriptors[index])
                self.points[pid] = point
            elif position is not None and not point.optimized:
                point.position = T.act(position)
            if key in point.observations:
                continue
            point.observations[key] = index
            kf.point_ids[index] = pid
        self.database.add(key, kf.bow)
        return kf

    def apply_point_update(self, robot_id: int, update: MapPointUpdate) -> int:
        """Take edge-refined positions for points the cloud has not optimized yet."""
        T = self.drift_alignment.get(robot_id)
        if T is None:
            return 0
        applied = 0
        for gid, position in update.points.items():
            point = self.points.get(self.resolve(gid))
            if point is not None and not point.optimized:
                point.position = T.act(position)
                applied += 1
        return applied

    def add_virtual_keyframe(self, kf: GlobalKeyframe) -> GlobalKeyframe:
        for index, pid in enumerate(kf.point_ids):
            if pid >= 0:
                self.points[int(pid)].observations[kf.key] = index
        self.keyframes[kf.key] = kf
        self.database.add(kf.key, kf.bow)
        return kf

    def next_virtual_key(self, robot_id: int) -> KfKey:
        n = self._virtual_ids.get(robot_id, 0) + 1
        self._virtual_ids[robot_id] = n
        return (robot_id, -n)

    # -- removal and fusion -----------------------------------------------

    def remove_keyframe(self, key: KfKey) -> None:
        """Drop a keyframe, its observations and its BoW entry; the IMU chain is bridged."""
        kf = self[key]
        for pid in kf.point_ids:
            point = self.points.get(int(pid)) if pid >= 0 else None
            if point is not None:
                point.observations.pop(key, None)
        nxt = next((k for k in self.keyframes.values() if k.prev_key == key), None)
        if nxt is not None:
            nxt.prev_key = kf.prev_key
            nxt.imu = kf.imu + nxt.imu if kf.prev_key is not None else nxt.imu
            nxt.pre = None
            if kf.prev_key is not None and nxt.imu:
                try:
                    nxt.pre = preintegrate(nxt.imu, nxt.state.bias, t_end=nxt.timestamp)
                except ImuError:
                    nxt.pre = None
        if self.last_key.get(kf.robot_id) == key:
            if kf.prev_key is not None:
                self.last_key[kf.robot_id] = kf.prev_key
            else:
                del self.last_key[kf.robot_id]
        del self.keyframes[key]
        self.database.remove(key)
        self.loops = [e for e in self.loops if key not in (e.query, e.candidate)]

    def fuse_points(self, keep: int, drop: int) -> None:
        """Union the observations of `drop` into `keep`; every observation is preserved."""
        if keep == drop:
            return
        a, b = self.points[keep], self.points.pop(drop)
        for key, index in b.observations.items():
            a.observations[key] = index
            self.keyframes[key].point_ids[index] = keep
        a.optimized = a.optimized or b.optimized
        self.aliases[drop] = keep

    def transform_component(self, root: int, T: Pose) -> None:
        """Rigidly move every keyframe and point of a component; alignments follow."""
        robots = set(self.robots_in(root))
        moved_points: set[int] = set()
        for kf in self.keyframes.values():
            if kf.robot_id not in robots:
                continue
            kf.state = transform_state(T, kf.state)
            moved_points.update(int(p) for p in kf.point_ids if p >= 0)
        for pid in moved_points:
            self.points[pid].position = T.act(self.points[pid].position)
        for r in robots:
            self.frame_alignment[r] = T @ self.frame_alignment[r]
            self.drift_alignment[r] = T @ self.drift_alignment[r]

    # -- queries ------------------------------------------------------------

    def covisibility(self, key: KfKey) -> Counter:
        weights: Counter = Counter()
        for pid in self[key].point_ids:
            point = self.points.get(int(pid)) if pid >= 0 else None
            if point is None:
                continue
            for other in point.observations:
                if other != key:
                    weights[other] += 1
        return weights

    def loop_endpoints(self) -> set[KfKey]:
        return {k for e in self.loops for k in (e.query, e.candidate)}

    def observation_count(self) -> int:
        return sum(len(p.observations) for p in self.points.values())

    def edge_frame_pose(self, kf: GlobalKeyframe) -> Pose:
        """The keyframe's pose expressed in its robot's edge world frame."""
        return self.frame_alignment[kf.robot_id].inverse() @ kf.pose

    def trajectory(self, robot_id: int, include_virtual: bool = False) -> list[tuple[float, Pose]]:
        kfs = [kf for kf in self.keyframes_of(robot_id) if include_virtual or not kf.virtual]
        return sorted(((kf.timestamp, kf.pose) for kf in kfs), key=lambda e: e[0])

    def iter_sorted(self) -> Iterator[GlobalKeyframe]:
        for key in sorted(self.keyframes):
            yield self.keyframes[key]

    def stats(self) -> dict:
        inter = sum(e.inter_robot for e in self.loops)
        return {
            "keyframes": sum(not kf.virtual for kf in self.keyframes.values()),
            "virtual_keyframes": sum(kf.virtual for kf in self.keyframes.values()),
            "map_points": len(self.points),
            "loops_intra": len(self.loops) - inter,
            "loops_inter": inter,
            "components": len(self.components()),
        }

    def check_consistency(self) -> None:
        """Raise AssertionError when the map's cross references disagree."""
        for pid, point in self.points.items():
            for key, index in point.observations.items():
                assert key in self.keyframes, (pid, key)
                assert self.keyframes[key].point_ids[index] == pid, (pid, key, index)
        for root in self.components():
            assert root in self.anchors, f"component {root} has no anchor"
        for edge in self.loops:
            assert edge.query in self.keyframes and edge.candidate in self.keyframes

    def dump(self, path: str | Path) -> None:
        """Write keyframes, map points and loop edges as text, ordered by (robot, id)."""
        with open(path, "w") as f:
            f.write("# KF robot kf_id timestamp tx ty tz qx qy qz qw virtual\n")
            for kf in self.iter_sorted():
                t = kf.pose.translation
                q = kf.pose.quaternion_xyzw()
                f.write(
                    f"KF {kf.key[0]} {kf.key[1]} {kf.timestamp:.6f} "
                    f"{t[0]:.6f} {t[1]:.6f} {t[2]:.6f} {q[0]:.6f} {q[1]:.6f} {q[2]:.6f} {q[3]:.6f} "
                    f"{int(kf.virtual)}\n"
                )
            f.write("# MP point_id x y z n_obs\n")
            for pid in sorted(self.points):
                p = self.points[pid]
                f.write(
                    f"MP {pid} {p.position[0]:.6f} {p.position[1]:.6f} {p.position[2]:.6f} "
                    f"{len(p.observations)}\n"
                )
            f.write("# LOOP q_robot q_kf c_robot c_kf inliers\n")
            for e in sorted(self.loops, key=lambda e: (e.query, e.candidate)):
                f.write(f"LOOP {e.query[0]} {e.query[1]} {e.candidate[0]} {e.candidate[1]} {e.inliers}\n")
