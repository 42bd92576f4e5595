"""ASL (EuRoC) dataset layout: reading real sequences and writing generated ones.

    <root>/mav0/cam0/data.csv                       timestamp_ns, filename
    <root>/mav0/cam0/data/<filename>
    <root>/mav0/imu0/data.csv                       timestamp_ns, w_xyz, a_xyz
    <root>/mav0/state_groundtruth_estimate0/data.csv timestamp_ns, p_xyz, q_wxyz, ...
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from geometry.pose import Pose
from harness.errors import MalformedRowError, MissingFileError
from harness.io import StampedTrajectory
from imu.types import ImuSample
from tracking.frontend import CameraFrame
from tracking.image import load_gray

logger = logging.getLogger(__name__)

CAM_CSV = Path("mav0/cam0/data.csv")
CAM_DATA = Path("mav0/cam0/data")
IMU_CSV = Path("mav0/imu0/data.csv")
GT_CSV = Path("mav0/state_groundtruth_estimate0/data.csv")

NS_PER_S = 1_000_000_000


@dataclass(eq=False)
class AslDataset:
    root: Path
    frames: list[CameraFrame] = field(default_factory=list)
    imu: list[ImuSample] = field(default_factory=list)
    ground_truth: StampedTrajectory = field(default_factory=StampedTrajectory)
    filenames: list[str] = field(default_factory=list)


def _rows(path: Path, columns: int) -> list[tuple[int, int, list[str]]]:
    """(line number, timestamp ns, remaining fields) for every data row, time strictly increasing."""
    if not path.is_file():
        raise MissingFileError(str(path))
    out = []
    last = None
    with open(path, newline="") as f:
        for line_no, row in enumerate(csv.reader(f), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            fields = [c.strip() for c in row]
            if len(fields) < columns:
                raise MalformedRowError(str(path), line_no, f"expected {columns} columns, got {len(fields)}")
            try:
                stamp = int(fields[0])
            except ValueError:
                raise MalformedRowError(str(path), line_no, f"bad timestamp {fields[0]!r}") from None
            if last is not None and stamp <= last:
                raise MalformedRowError(str(path), line_no, "timestamps must be strictly increasing")
            last = stamp
            out.append((line_no, stamp, fields[1:columns]))
    return out


def _floats(path: Path, line_no: int, fields: list[str]) -> list[float]:
    try:
        return [float(x) for x in fields]
    except ValueError:
        raise MalformedRowError(str(path), line_no, "non-numeric value") from None


def _seconds(stamp_ns: int) -> float:
    return stamp_ns / NS_PER_S


def read_imu_csv(path: str | Path) -> list[ImuSample]:
    path = Path(path)
    samples = []
    for line_no, stamp, fields in _rows(path, 7):
        v = _floats(path, line_no, fields)
        samples.append(ImuSample(_seconds(stamp), np.array(v[0:3]), np.array(v[3:6])))
    return samples


def read_camera_csv(path: str | Path) -> list[tuple[float, str]]:
    path = Path(path)
    return [(_seconds(stamp), fields[0]) for _, stamp, fields in _rows(path, 2)]


def read_groundtruth_csv(path: str | Path) -> StampedTrajectory:
    path = Path(path)
    times, poses = [], []
    for line_no, stamp, fields in _rows(path, 8):
        v = _floats(path, line_no, fields)
        qw, qx, qy, qz = v[3:7]
        quat = np.array([qx, qy, qz, qw])
        norm = np.linalg.norm(quat)
        if norm < 1e-12:
            raise MalformedRowError(str(path), line_no, "zero quaternion")
        times.append(_seconds(stamp))
        poses.append(Pose.from_quaternion(quat / norm, np.array(v[0:3])))
    return StampedTrajectory(np.array(times), poses)


def load_asl_dataset(root: str | Path, load_images: bool = True) -> AslDataset:
    """Read camera, IMU and ground-truth streams of one ASL sequence.

    Raises:
        MissingFileError: a CSV or a referenced image is absent.
        MalformedRowError: a row is short, non-numeric or out of time order.
    """
    root = Path(root)
    cameras = read_camera_csv(root / CAM_CSV)
    imu = read_imu_csv(root / IMU_CSV)
    ground_truth = read_groundtruth_csv(root / GT_CSV)
    frames = []
    for index, (t, name) in enumerate(cameras):
        image = None
        if load_images:
            image_path = root / CAM_DATA / name
            if not image_path.is_file():
                raise MissingFileError(str(image_path))
            image = load_gray(image_path)
        frames.append(CameraFrame(index, t, image=image))
    logger.info(
        f"[Dataset] Loaded {root.name}: {len(frames)} frames, {len(imu)} IMU samples, "
        f"{len(ground_truth)} ground-truth poses"
    )
    return AslDataset(root, frames, imu, ground_truth, [name for _, name in cameras])


def _stamp(t: float) -> int:
    return int(round(t * NS_PER_S))


def write_asl_streams(
    root: str | Path,
    imu: Sequence[ImuSample],
    ground_truth: StampedTrajectory,
    frame_times: Sequence[float],
    filenames: Sequence[str],
    velocities: np.ndarray | None = None,
) -> None:
    """Write the three CSVs (images are the caller's business)."""
    root = Path(root)
    for rel in (CAM_CSV, IMU_CSV, GT_CSV):
        (root / rel).parent.mkdir(parents=True, exist_ok=True)
    (root / CAM_DATA).mkdir(parents=True, exist_ok=True)

    with open(root / CAM_CSV, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["#timestamp [ns]", "filename"])
        for t, name in zip(frame_times, filenames):
            writer.writerow([_stamp(t), name])

    with open(root / IMU_CSV, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["#timestamp [ns]", "w_RS_S_x", "w_RS_S_y", "w_RS_S_z", "a_RS_S_x", "a_RS_S_y", "a_RS_S_z"]
        )
        for s in imu:
            writer.writerow([_stamp(s.timestamp), *(f"{x:.12g}" for x in (*s.gyro, *s.accel))])

    with open(root / GT_CSV, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["#timestamp", "p_RS_R_x", "p_RS_R_y", "p_RS_R_z", "q_RS_w", "q_RS_x", "q_RS_y", "q_RS_z",
             "v_RS_R_x", "v_RS_R_y", "v_RS_R_z"]
        )
        for k, (t, pose) in enumerate(zip(ground_truth.timestamps, ground_truth.poses)):
            qx, qy, qz, qw = pose.quaternion_xyzw()
            v = velocities[k] if velocities is not None else np.zeros(3)
            writer.writerow(
                [_stamp(t), *(f"{x:.12g}" for x in (*pose.translation, qw, qx, qy, qz, *v))]
            )
    logger.debug(f"[Dataset] Wrote ASL streams under {root}")
