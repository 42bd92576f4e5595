"""Run reports: accuracy, bandwidth, codec cost and map statistics, plus acceptance gates."""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from codec.costs import CostReport
from config import AcceptanceConfig, AlignmentMode, FrameMode
from harness.errors import InsufficientAssociationError
from harness.io import StampedTrajectory
from harness.metrics import MIN_ALIGNMENT_PAIRS, associate, evaluate_ate, umeyama

logger = logging.getLogger(__name__)


def codec_statistics(reports: list[CostReport]) -> tuple[dict[str, float], dict[str, float]]:
    """(bits per feature by mode, total bits by component) over every transmitted frame."""
    per_feature: dict[str, float] = {}
    for mode, name in ((FrameMode.KEYFRAME, "kf"), (FrameMode.NON_KEYFRAME, "nonkf")):
        chosen = [r for r in reports if r.mode == mode and r.n_features]
        features = sum(r.n_features for r in chosen)
        per_feature[f"{name}_frames"] = float(sum(1 for r in reports if r.mode == mode))
        per_feature[f"{name}_ideal"] = sum(r.total_ideal_bits for r in chosen) / features if features else 0.0
        per_feature[f"{name}_actual"] = sum(r.actual_bits for r in chosen) / features if features else 0.0
    breakdown = {
        "keypoint": float(sum(r.kp_bits for r in reports)),
        "word": float(sum(r.bow_bits for r in reports)),
        "residual": float(sum(r.res_bits for r in reports)),
        "side": float(sum(r.side_bits for r in reports)),
        "header": float(sum(r.header_bits for r in reports)),
        "actual": float(sum(r.actual_bits for r in reports)),
    }
    return per_feature, breakdown


def joint_ate(
    estimates: dict[int, StampedTrajectory],
    ground_truth: dict[int, StampedTrajectory],
    mode: AlignmentMode,
) -> float:
    """ATE of all robots under one shared alignment, i.e. in a single fused frame.

    Raises:
        InsufficientAssociationError: fewer than three pairs across all robots.
    """
    source, target = [], []
    for robot_id, est in sorted(estimates.items()):
        gt = ground_truth[robot_id]
        for i, j in associate(est, gt):
            source.append(est.positions[i])
            target.append(gt.positions[j])
    if len(source) < MIN_ALIGNMENT_PAIRS:
        raise InsufficientAssociationError(len(source), MIN_ALIGNMENT_PAIRS)
    rotation, translation, scale = umeyama(np.array(source), np.array(target), mode == AlignmentMode.SIM3)
    aligned = scale * np.array(source) @ rotation.T + translation
    errors = np.linalg.norm(aligned - np.array(target), axis=1)
    return float(np.sqrt(np.mean(errors**2)))


def trajectory_ates(
    estimates: dict[int, StampedTrajectory], ground_truth: dict[int, StampedTrajectory], mode: AlignmentMode
) -> dict[int, float]:
    """Per-robot ATE with each robot aligned on its own; robots that cannot be evaluated are skipped."""
    out = {}
    for robot_id, est in sorted(estimates.items()):
        try:
            out[robot_id], _ = evaluate_ate(est, ground_truth[robot_id], mode)
        except InsufficientAssociationError as e:
            logger.warning(f"[Report] Robot {robot_id} trajectory not evaluated: {e}")
    return out


@dataclass
class RunReport:
    robots: int
    duration: float
    pipeline: str
    edge_ate: dict[int, float] = field(default_factory=dict)
    cloud_ate: dict[int, float] = field(default_factory=dict)
    global_ate: float | None = None
    bandwidth_kbps: dict[str, float] = field(default_factory=dict)
    link_bits: dict[str, int] = field(default_factory=dict)
    bits_per_feature: dict[str, float] = field(default_factory=dict)
    bit_breakdown: dict[str, float] = field(default_factory=dict)
    keyframes_pre: int = 0
    keyframes_post: int = 0
    points_pre: int = 0
    points_post: int = 0
    virtual_keyframes: int = 0
    loops_intra: int = 0
    loops_inter: int = 0
    merged: bool = False
    relocalizations: int = 0
    drift: dict[int, float] = field(default_factory=dict)
    retransmissions: int = 0
    timing: dict[str, float] = field(default_factory=dict)
    gates: dict[str, bool] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.gates.values())

    @property
    def single_robot_ate(self) -> float | None:
        return float(np.mean(list(self.edge_ate.values()))) if self.edge_ate else None

    def metrics(self) -> dict[str, float]:
        """Every deterministic metric as a flat name -> value map (timings excluded)."""
        out: dict[str, float] = {"robots": self.robots, "duration_s": round(self.duration, 6)}
        for robot_id, value in sorted(self.edge_ate.items()):
            out[f"ate_single.robot{robot_id}"] = value
        for robot_id, value in sorted(self.cloud_ate.items()):
            out[f"ate_fused.robot{robot_id}"] = value
        if self.global_ate is not None:
            out["ate_global"] = self.global_ate
        for name, value in sorted(self.bandwidth_kbps.items()):
            out[f"bandwidth_kbps.{name}"] = value
        for name, value in sorted(self.link_bits.items()):
            out[f"link_bits.{name}"] = value
        for name, value in sorted(self.bits_per_feature.items()):
            out[f"bits_per_feature.{name}"] = value
        for name, value in sorted(self.bit_breakdown.items()):
            out[f"bits.{name}"] = value
        out.update(
            {
                "keyframes_pre": self.keyframes_pre,
                "keyframes_post": self.keyframes_post,
                "map_points_pre": self.points_pre,
                "map_points_post": self.points_post,
                "virtual_keyframes": self.virtual_keyframes,
                "loops_intra": self.loops_intra,
                "loops_inter": self.loops_inter,
                "merged": int(self.merged),
                "relocalizations": self.relocalizations,
                "retransmissions": self.retransmissions,
            }
        )
        for robot_id, value in sorted(self.drift.items()):
            out[f"drift.robot{robot_id}"] = value
        for name, ok in sorted(self.gates.items()):
            out[f"gate.{name}"] = int(ok)
        return out

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["metric", "value"])
            for name, value in self.metrics().items():
                writer.writerow([name, f"{value:.6f}" if isinstance(value, float) else value])
            for name, value in sorted(self.timing.items()):
                writer.writerow([f"timing.{name}", f"{value:.3f}"])
        (out / "summary.txt").write_text(self.summary())
        logger.info(f"[Report] Wrote metrics.csv and summary.txt to {out}")

    def summary(self) -> str:
        lines = [f"edgeslam run: {self.robots} robots, {self.duration:.1f} s, pipeline {self.pipeline}", ""]
        if self.edge_ate or self.cloud_ate:
            lines.append("Accuracy (ATE RMSE, m)")
            for robot_id in sorted(set(self.edge_ate) | set(self.cloud_ate)):
                single = self.edge_ate.get(robot_id)
                fused = self.cloud_ate.get(robot_id)
                lines.append(
                    f"  robot {robot_id}: single {_fmt(single)}  fused {_fmt(fused)}"
                    f"  drift {self.drift.get(robot_id, 0.0):.4f}"
                )
            lines.append(f"  global (joint alignment): {_fmt(self.global_ate)}")
            lines.append("")
        lines.append("Bandwidth (kbit/s)")
        for name, value in sorted(self.bandwidth_kbps.items()):
            lines.append(f"  {name}: {value:.2f}")
        lines.append(f"  retransmissions: {self.retransmissions}")
        lines.append("")
        bpf = self.bits_per_feature
        lines.append("Codec (bits per feature, ideal / actual)")
        lines.append(f"  keyframe:     {bpf.get('kf_ideal', 0.0):.2f} / {bpf.get('kf_actual', 0.0):.2f}")
        lines.append(f"  non-keyframe: {bpf.get('nonkf_ideal', 0.0):.2f} / {bpf.get('nonkf_actual', 0.0):.2f}")
        total = self.bit_breakdown.get("actual", 0.0)
        for name in ("keypoint", "word", "residual", "side", "header"):
            value = self.bit_breakdown.get(name, 0.0)
            share = value / total if total else 0.0
            lines.append(f"  {name:<9} {value:14.0f} bits ({share:.1%})")
        lines.append("")
        lines.append("Map")
        lines.append(f"  keyframes: {self.keyframes_pre} -> {self.keyframes_post} (virtual {self.virtual_keyframes})")
        lines.append(f"  map points: {self.points_pre} -> {self.points_post}")
        lines.append(f"  loops: {self.loops_intra} intra-robot, {self.loops_inter} inter-robot; merged: {self.merged}")
        lines.append(f"  relocalizations: {self.relocalizations}")
        if self.timing:
            lines.append("")
            lines.append("Timing (s)")
            for name, value in sorted(self.timing.items()):
                lines.append(f"  {name}: {value:.2f}")
        lines.append("")
        lines.append("Acceptance")
        for name, ok in sorted(self.gates.items()):
            lines.append(f"  {'PASS' if ok else 'FAIL'}  {name}")
        lines.append(f"  overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"


def _fmt(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def evaluate_gates(report: RunReport, acceptance: AcceptanceConfig) -> dict[str, bool]:
    """Gates that apply to this run; a gate whose inputs are absent is not evaluated."""
    gates: dict[str, bool] = {}
    if report.global_ate is not None:
        gates["global_ate"] = report.global_ate <= acceptance.max_global_ate
        single = report.single_robot_ate
        if single:
            gates["global_to_single_ratio"] = report.global_ate <= acceptance.max_global_to_single_ratio * single
    if acceptance.require_merge and report.robots > 1 and report.pipeline == "full":
        gates["merged"] = report.merged
    bpf = report.bits_per_feature
    if bpf.get("nonkf_frames"):
        gates["nonkf_bits_per_feature"] = bpf["nonkf_actual"] <= acceptance.max_nonkf_bits_per_feature
        if bpf.get("kf_frames"):
            gates["nonkf_cheaper_than_kf"] = bpf["nonkf_actual"] < bpf["kf_actual"]
    return gates
