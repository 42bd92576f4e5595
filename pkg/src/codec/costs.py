"""Mode decision and ideal bit costs of transmitted features."""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

from config import CodecConfig, FrameMode
from codec.errors import MissingDescriptorError
from codec.geometry import PyramidGeometry
from tracking.features import Keypoint


def decide_mode(tracked_count: int, dt_since_last_kf: float, cfg: CodecConfig) -> FrameMode:
    """Keyframe when tracking is weak or the last keyframe is too old."""
    if dt_since_last_kf < 0:
        raise ValueError("dt_since_last_kf must be >= 0")
    if cfg.forced_keyframes:
        return FrameMode.KEYFRAME
    if tracked_count < cfg.kf_min_tracked or dt_since_last_kf > cfg.kf_max_interval:
        return FrameMode.KEYFRAME
    return FrameMode.NON_KEYFRAME


def keypoint_cost(kp: Keypoint, mode: FrameMode, geom: PyramidGeometry, cfg: CodecConfig) -> float:
    """log2 N_sigma + log2 H(sigma) + log2 W(sigma), plus log2 N_theta for keyframes."""
    level, _, _ = geom.quantize(kp)
    bits = math.log2(cfg.n_sigma) + math.log2(geom.height(level)) + math.log2(geom.width(level))
    if mode == FrameMode.KEYFRAME:
        bits += math.log2(cfg.n_theta)
    return bits


def word_cost(vocab_size: int) -> float:
    return math.log2(vocab_size)


def residual_cost(h: int, D: int, p0: float) -> float:
    """-(D - h) log2 p0 - h log2 (1 - p0)."""
    if not 0 <= h <= D:
        raise ValueError(f"h={h} outside [0, {D}]")
    if not 0.0 < p0 < 1.0:
        raise ValueError("p0 must be in (0, 1)")
    return -(D - h) * math.log2(p0) - h * math.log2(1.0 - p0)


@dataclass(frozen=True)
class FeatureCost:
    keypoint_bits: float
    word_bits: float = 0.0
    residual_bits: float = 0.0
    h: int = 0

    @property
    def total(self) -> float:
        return self.keypoint_bits + self.word_bits + self.residual_bits


@dataclass
class CostReport:
    """Ideal costs per feature and per component, plus what actually went on the wire."""

    frame_id: int
    mode: FrameMode
    features: list[FeatureCost] = field(default_factory=list)
    actual_bits: int = 0
    header_bits: int = 0
    side_bits: int = 0
    body_bits: int = 0

    @property
    def n_features(self) -> int:
        return len(self.features)

    @property
    def kp_bits(self) -> float:
        return sum(f.keypoint_bits for f in self.features)

    @property
    def bow_bits(self) -> float:
        return sum(f.word_bits for f in self.features)

    @property
    def res_bits(self) -> float:
        return sum(f.residual_bits for f in self.features)

    @property
    def total_ideal_bits(self) -> float:
        return self.kp_bits + self.bow_bits + self.res_bits

    def row(self) -> dict:
        return {
            "frame_id": self.frame_id,
            "mode": self.mode.value,
            "n_features": self.n_features,
            "kp_bits": round(self.kp_bits, 3),
            "bow_bits": round(self.bow_bits, 3),
            "res_bits": round(self.res_bits, 3),
            "total_ideal_bits": round(self.total_ideal_bits, 3),
            "actual_bits": self.actual_bits,
        }


def frame_cost(frame, mode: FrameMode, vocab, geom: PyramidGeometry, cfg: CodecConfig) -> CostReport:
    """Ideal costs of a frame: keypoints only for non-keyframes; keypoint, word and residual for keyframes.

    Raises:
        MissingDescriptorError: keyframe without one descriptor per keypoint.
    """
    report = CostReport(frame_id=frame.frame_id, mode=mode)
    if mode == FrameMode.NON_KEYFRAME:
        report.features = [FeatureCost(keypoint_cost(kp, mode, geom, cfg)) for kp in frame.keypoints]
        return report

    descriptors = frame.descriptors
    if len(frame.keypoints) and (descriptors is None or len(descriptors) != len(frame.keypoints)):
        raise MissingDescriptorError(
            f"Keyframe {frame.frame_id} has {len(frame.keypoints)} keypoints "
            f"but {0 if descriptors is None else len(descriptors)} descriptors"
        )
    if not len(frame.keypoints):
        return report
    _, _, hs = vocab.lookup_many(descriptors)
    w_bits = word_cost(vocab.size)
    report.features = [
        FeatureCost(
            keypoint_bits=keypoint_cost(kp, mode, geom, cfg),
            word_bits=w_bits,
            residual_bits=residual_cost(int(h), cfg.descriptor_bits, cfg.p0_kf),
            h=int(h),
        )
        for kp, h in zip(frame.keypoints, hs)
    ]
    return report


class CostLog:
    """Per-frame cost reports written as CSV."""

    FIELDS = ("frame_id", "mode", "n_features", "kp_bits", "bow_bits", "res_bits", "total_ideal_bits", "actual_bits")

    def __init__(self):
        self.reports: list[CostReport] = []

    def add(self, report: CostReport) -> None:
        self.reports.append(report)

    def bits_per_feature(self, mode: FrameMode, actual: bool = True) -> float:
        chosen = [r for r in self.reports if r.mode == mode and r.n_features]
        features = sum(r.n_features for r in chosen)
        if not features:
            return 0.0
        bits = sum(r.actual_bits if actual else r.total_ideal_bits for r in chosen)
        return bits / features

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=self.FIELDS)
            writer.writeheader()
            writer.writerows(r.row() for r in self.reports)


def estimate_p0(descriptors, vocab, bounds: tuple[float, float] = (0.5, 0.999)) -> float:
    """Residual zero-bit probability measured on calibration descriptors.

    p0 = 1 - mean(h) / D, clamped to `bounds`.
    """
    if descriptors is None or len(descriptors) == 0:
        raise MissingDescriptorError("No descriptors to calibrate p0 from")
    _, _, hs = vocab.lookup_many(descriptors)
    p0 = 1.0 - float(hs.mean()) / vocab.descriptor_bits
    return min(max(p0, bounds[0]), bounds[1])
