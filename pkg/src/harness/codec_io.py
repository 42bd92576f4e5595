"""Offline codec runs over feature dumps and a container for encoded frames.

Container layout (little-endian): magic "ESFC", u16 version, f64 p0,
u32 frame count, then per frame a u32 length and the encoded payload.
"""

import logging
import struct
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from codec.costs import CostLog, estimate_p0
from codec.errors import CorruptPayloadError, MissingDescriptorError
from codec.frame_codec import EncodedFrame, FeatureFrame, decode_frame, encode_frame, peek_mode
from codec.geometry import PyramidGeometry
from codec.vocabulary import Vocabulary
from config import AppConfig, FrameMode
from geometry.camera import CameraIntrinsics
from harness.scenario import flip_bits
from tracking.features import Keypoint
from tracking.frontend import CameraFrame, FrontendOutput, RobotFrontend

logger = logging.getLogger(__name__)

MAGIC = b"ESFC"
VERSION = 1
_HEADER = struct.Struct("<4sHdI")
_LENGTH = struct.Struct("<I")


def track_frames(config: AppConfig, frames: Sequence[CameraFrame], robot_id: int = 0) -> list[FrontendOutput]:
    """Run the robot front-end over frames without IMU and return every committed output."""
    frontend = RobotFrontend(
        robot_id, CameraIntrinsics.from_config(config.camera), config.tracking, config.codec, config.imu.gravity
    )
    outputs = []
    for tx_id, frame in enumerate(frames):
        output = frontend.process(frame, [], tx_id)
        frontend.commit(output)
        outputs.append(output)
    return outputs


def encode_frames(
    config: AppConfig, vocab: Vocabulary, frames: Sequence[CameraFrame]
) -> tuple[list[EncodedFrame], float, CostLog]:
    """Track, calibrate p0 on the first keyframes, then encode every frame.

    Returns the encoded frames, the p0 they were coded with and their cost reports.
    """
    outputs = track_frames(config, frames)
    calibration = [
        o.frame.descriptors for o in outputs if o.mode == FrameMode.KEYFRAME and o.frame.descriptors is not None
    ][: config.codec.calibration_keyframes]
    try:
        p0 = estimate_p0(np.vstack(calibration) if calibration else None, vocab)
    except MissingDescriptorError:
        p0 = config.codec.p0_kf
    codec = replace(config.codec, p0_kf=p0)
    geom = PyramidGeometry.from_config(codec)
    costs = CostLog()
    encoded = []
    for output in outputs:
        enc = encode_frame(output.frame, output.mode, vocab, geom, codec)
        costs.add(enc.cost_report)
        encoded.append(enc)
    logger.info(f"[Codec] Encoded {len(encoded)} frames with p0 {p0:.4f}")
    return encoded, p0, costs


def write_container(path: str | Path, encoded: Sequence[EncodedFrame], p0: float) -> None:
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, p0, len(encoded)))
        for enc in encoded:
            f.write(_LENGTH.pack(len(enc.payload)))
            f.write(enc.payload)


def read_container(path: str | Path) -> tuple[list[bytes], float]:
    """(payloads, p0) of a container file.

    Raises:
        CorruptPayloadError: bad magic, version or truncated body.
    """
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CorruptPayloadError(f"{path}: container header truncated")
    magic, version, p0, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC or version != VERSION:
        raise CorruptPayloadError(f"{path}: not an encoded-frame container (magic {magic!r}, version {version})")
    offset = _HEADER.size
    payloads = []
    for index in range(count):
        if offset + _LENGTH.size > len(data):
            raise CorruptPayloadError(f"{path}: frame {index} length truncated")
        (length,) = _LENGTH.unpack_from(data, offset)
        offset += _LENGTH.size
        if offset + length > len(data):
            raise CorruptPayloadError(f"{path}: frame {index} payload truncated")
        payloads.append(data[offset : offset + length])
        offset += length
    if offset != len(data):
        raise CorruptPayloadError(f"{path}: {len(data) - offset} trailing bytes")
    return payloads, p0


def decode_container(config: AppConfig, vocab: Vocabulary, path: str | Path) -> list[tuple[FrameMode, FeatureFrame]]:
    payloads, p0 = read_container(path)
    codec = replace(config.codec, p0_kf=p0)
    geom = PyramidGeometry.from_config(codec)
    return [(peek_mode(p), decode_frame(p, vocab, geom, codec)) for p in payloads]


def synthetic_frame(config: AppConfig, vocab: Vocabulary, n_features: int, seed: int = 0) -> FeatureFrame:
    """Uniform keypoints over all levels with descriptors drawn near vocabulary words."""
    rng = np.random.default_rng(seed)
    cam = config.camera
    keypoints = tuple(
        Keypoint(
            u=float(rng.uniform(0, cam.width - 1)),
            v=float(rng.uniform(0, cam.height - 1)),
            level=int(rng.integers(0, config.codec.n_sigma)),
            orientation_bin=int(rng.integers(0, config.codec.n_theta)),
        )
        for _ in range(n_features)
    )
    words = vocab.words[rng.integers(0, vocab.size, size=n_features)]
    descriptors = flip_bits(words, config.scenario.descriptor_flip_prob, rng)
    return FeatureFrame(0, 0.0, keypoints, descriptors.reshape(n_features, -1))
