"""Typed message bodies. All layouts are little-endian and length-checked.

Robot-to-edge frame messages carry an encoded frame payload verbatim; the
other message types use the records below.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from geometry.pose import Pose
from imu.types import ImuBias, ImuSample, NavState
from wire.errors import PayloadFormatError

_SETUP = struct.Struct("<IdI")
_ACK = struct.Struct("<BI")
_COUNT = struct.Struct("<I")
_KF_HEAD = struct.Struct("<Id21dI")
_INERTIAL = struct.Struct("<I6d3dd9d3d")

_POINT = np.dtype([("id", "<i8"), ("xyz", "<f8", (3,))])
_IMU = np.dtype([("t", "<f8"), ("gyro", "<f8", (3,)), ("accel", "<f8", (3,))])
_POSE = np.dtype([("kf_id", "<u4"), ("rotation", "<f8", (9,)), ("translation", "<f8", (3,))])


def _take(data: bytes, offset: int, dtype: np.dtype, count: int, what: str) -> tuple[np.ndarray, int]:
    end = offset + dtype.itemsize * count
    if end > len(data):
        raise PayloadFormatError(f"{what}: need {end} bytes, have {len(data)}")
    return np.frombuffer(data, dtype=dtype, count=count, offset=offset), end


def _count(data: bytes, offset: int, what: str) -> tuple[int, int]:
    if offset + _COUNT.size > len(data):
        raise PayloadFormatError(f"{what}: missing count at byte {offset}")
    return _COUNT.unpack_from(data, offset)[0], offset + _COUNT.size


def _done(data: bytes, offset: int, what: str) -> None:
    if offset != len(data):
        raise PayloadFormatError(f"{what}: {len(data) - offset} unexpected trailing bytes")


@dataclass(frozen=True)
class SessionSetup:
    """Sent once per link before any data; both ends must agree on the fingerprint."""

    fingerprint: int
    p0: float
    vocab_fingerprint: int

    def to_bytes(self) -> bytes:
        return _SETUP.pack(self.fingerprint, self.p0, self.vocab_fingerprint)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SessionSetup":
        if len(data) != _SETUP.size:
            raise PayloadFormatError(f"SessionSetup: expected {_SETUP.size} bytes, got {len(data)}")
        return cls(*_SETUP.unpack(data))


@dataclass(frozen=True)
class Ack:
    """Cumulative acknowledgment: every seq <= `seq` of stream (robot_id, acked_type) arrived."""

    acked_type: int
    seq: int

    def to_bytes(self) -> bytes:
        return _ACK.pack(self.acked_type, self.seq)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Ack":
        if len(data) != _ACK.size:
            raise PayloadFormatError(f"Ack: expected {_ACK.size} bytes, got {len(data)}")
        return cls(*_ACK.unpack(data))


def _imu_array(samples: list[ImuSample]) -> np.ndarray:
    arr = np.zeros(len(samples), dtype=_IMU)
    for i, s in enumerate(samples):
        arr[i] = (s.timestamp, s.gyro, s.accel)
    return arr


def _imu_samples(arr: np.ndarray) -> list[ImuSample]:
    return [ImuSample(float(r["t"]), r["gyro"], r["accel"]) for r in arr]


@dataclass(frozen=True, eq=False)
class ImuBatch:
    samples: list[ImuSample]

    def to_bytes(self) -> bytes:
        return _COUNT.pack(len(self.samples)) + _imu_array(self.samples).tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ImuBatch":
        n, offset = _count(data, 0, "ImuBatch")
        arr, offset = _take(data, offset, _IMU, n, "ImuBatch")
        _done(data, offset, "ImuBatch")
        return cls(_imu_samples(arr))


@dataclass(frozen=True, eq=False)
class InertialParams:
    """Edge estimate handed back to the robot after inertial initialization."""

    kf_id: int
    bias: ImuBias
    gravity: np.ndarray
    scale: float
    rotation: np.ndarray
    velocity: np.ndarray

    def to_bytes(self) -> bytes:
        return _INERTIAL.pack(
            self.kf_id,
            *self.bias.as_vector(),
            *np.asarray(self.gravity, dtype=float),
            self.scale,
            *np.asarray(self.rotation, dtype=float).reshape(9),
            *np.asarray(self.velocity, dtype=float),
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "InertialParams":
        if len(data) != _INERTIAL.size:
            raise PayloadFormatError(f"InertialParams: expected {_INERTIAL.size} bytes, got {len(data)}")
        v = _INERTIAL.unpack(data)
        return cls(
            kf_id=v[0],
            bias=ImuBias.from_vector(v[1:7]),
            gravity=np.array(v[7:10]),
            scale=v[10],
            rotation=np.array(v[11:20]).reshape(3, 3),
            velocity=np.array(v[20:23]),
        )


def _points_bytes(points: dict[int, np.ndarray]) -> bytes:
    arr = np.zeros(len(points), dtype=_POINT)
    for i, pid in enumerate(sorted(points)):
        arr[i] = (pid, points[pid])
    return _COUNT.pack(len(arr)) + arr.tobytes()


def _points_from(data: bytes, offset: int, what: str) -> tuple[dict[int, np.ndarray], int]:
    n, offset = _count(data, offset, what)
    arr, offset = _take(data, offset, _POINT, n, what)
    return {int(r["id"]): np.array(r["xyz"]) for r in arr}, offset


@dataclass(frozen=True, eq=False)
class MapPointUpdate:
    """Map point positions (global ids) in the sender's world frame."""

    points: dict[int, np.ndarray]

    def to_bytes(self) -> bytes:
        return _points_bytes(self.points)

    @classmethod
    def from_bytes(cls, data: bytes) -> "MapPointUpdate":
        points, offset = _points_from(data, 0, "MapPointUpdate")
        _done(data, offset, "MapPointUpdate")
        return cls(points)


def _state_vector(state: NavState) -> list[float]:
    return [
        *state.rotation.reshape(9),
        *state.position,
        *state.velocity,
        *state.bias.gyro,
        *state.bias.accel,
    ]


def _state_from(v) -> NavState:
    v = np.asarray(v, dtype=float)
    return NavState(v[0:9].reshape(3, 3), v[9:12], v[12:15], ImuBias(v[15:18], v[18:21]))


@dataclass(frozen=True, eq=False)
class KeyframeRecord:
    """Edge-to-cloud keyframe record.

    Carries the state, the features with their vocabulary words, the map
    associations and the raw IMU samples since the previous keyframe.
    `point_ids` holds the global map point id per keypoint (-1 for none) and
    `points` the current positions of every associated point.
    """

    kf_id: int
    timestamp: float
    state: NavState
    keypoints: np.ndarray
    levels: np.ndarray
    descriptors: np.ndarray
    words: np.ndarray
    point_ids: np.ndarray
    points: dict[int, np.ndarray] = field(default_factory=dict)
    imu: list[ImuSample] = field(default_factory=list)

    def to_bytes(self) -> bytes:
        n = len(self.keypoints)
        parts = [
            _KF_HEAD.pack(self.kf_id, self.timestamp, *_state_vector(self.state), n),
            np.asarray(self.keypoints, dtype="<f8").reshape(n, 2).tobytes(),
            np.asarray(self.levels, dtype=np.uint8).reshape(n).tobytes(),
            np.asarray(self.descriptors, dtype=np.uint8).reshape(n, 32).tobytes(),
            np.asarray(self.words, dtype="<u4").reshape(n).tobytes(),
            np.asarray(self.point_ids, dtype="<i8").reshape(n).tobytes(),
            _points_bytes(self.points),
            _COUNT.pack(len(self.imu)),
            _imu_array(self.imu).tobytes(),
        ]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "KeyframeRecord":
        if len(data) < _KF_HEAD.size:
            raise PayloadFormatError("KeyframeRecord: truncated header")
        head = _KF_HEAD.unpack_from(data, 0)
        kf_id, timestamp, n = head[0], head[1], head[-1]
        state = _state_from(head[2:23])
        offset = _KF_HEAD.size
        kps, offset = _take(data, offset, np.dtype("<f8"), 2 * n, "KeyframeRecord")
        levels, offset = _take(data, offset, np.dtype(np.uint8), n, "KeyframeRecord")
        descs, offset = _take(data, offset, np.dtype(np.uint8), 32 * n, "KeyframeRecord")
        words, offset = _take(data, offset, np.dtype("<u4"), n, "KeyframeRecord")
        pids, offset = _take(data, offset, np.dtype("<i8"), n, "KeyframeRecord")
        points, offset = _points_from(data, offset, "KeyframeRecord")
        m, offset = _count(data, offset, "KeyframeRecord")
        imu, offset = _take(data, offset, _IMU, m, "KeyframeRecord")
        _done(data, offset, "KeyframeRecord")
        return cls(
            kf_id=kf_id,
            timestamp=timestamp,
            state=state,
            keypoints=kps.reshape(n, 2).copy(),
            levels=levels.astype(int),
            descriptors=descs.reshape(n, 32).copy(),
            words=words.astype(int),
            point_ids=pids.astype(np.int64),
            points=points,
            imu=_imu_samples(imu),
        )


@dataclass(frozen=True, eq=False)
class PoseCorrection:
    """Globally optimized keyframe poses T_wc, in the robot's edge world frame."""

    poses: dict[int, Pose]

    def to_bytes(self) -> bytes:
        arr = np.zeros(len(self.poses), dtype=_POSE)
        for i, kf_id in enumerate(sorted(self.poses)):
            pose = self.poses[kf_id]
            arr[i] = (kf_id, pose.rotation.reshape(9), pose.translation)
        return _COUNT.pack(len(arr)) + arr.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "PoseCorrection":
        n, offset = _count(data, 0, "PoseCorrection")
        arr, offset = _take(data, offset, _POSE, n, "PoseCorrection")
        _done(data, offset, "PoseCorrection")
        return cls({int(r["kf_id"]): Pose(r["rotation"].reshape(3, 3), r["translation"]) for r in arr})
