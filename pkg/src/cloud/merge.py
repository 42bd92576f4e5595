"""Joining components on an inter-robot loop and fusing duplicate map points."""

import logging
from dataclasses import dataclass

import numpy as np

from cloud.global_map import GlobalMap, KfKey, LoopEdge
from config import CloudConfig
from geometry.camera import CameraIntrinsics, project_points
from geometry.pose import Pose
from tracking.descriptor import hamming_matrix

logger = logging.getLogger(__name__)


@dataclass
class MergeResult:
    kept_root: int
    moved_root: int
    transform: Pose
    fused: int = 0


def neighbourhood(gmap: GlobalMap, key: KfKey, size: int = 5) -> list[KfKey]:
    """The keyframe and its strongest covisible neighbours."""
    ranked = sorted(gmap.covisibility(key).items(), key=lambda kv: (-kv[1], kv[0]))
    return [key] + [k for k, _ in ranked[:size]]


def _reprojects(gmap: GlobalMap, pid: int, key: KfKey, index: int, intr: CameraIntrinsics, radius: float) -> bool:
    kf = gmap.keyframes[key]
    offset = kf.offset(index)
    T_wc = kf.pose @ offset if offset is not None else kf.pose
    uv, valid = project_points(intr, T_wc.inverse().act(gmap.points[pid].position))
    return bool(valid[0]) and float(np.linalg.norm(uv[0] - kf.keypoints[index])) < radius


def fuse_duplicates(
    gmap: GlobalMap, keys_a: list[KfKey], keys_b: list[KfKey], intr: CameraIntrinsics, cfg: CloudConfig
) -> int:
    """Fuse points of keys_b's neighbourhood into points seen by keys_a when they coincide.

    A pair is fused when each point reprojects within fuse_radius_px of an
    observation of the other and their descriptors agree. Points observed in
    a common keyframe are never fused. The point with more observations
    survives and takes the union of observations.
    """
    candidates = sorted(
        {int(p) for k in keys_b if k in gmap.keyframes for p in gmap.keyframes[k].point_ids if p >= 0}
    )
    if not candidates:
        return 0
    fused = 0
    for key in keys_a:
        kf = gmap.keyframes.get(key)
        if kf is None:
            continue
        live = [p for p in candidates if p in gmap.points and key not in gmap.points[p].observations]
        if not live:
            continue
        positions = np.array([gmap.points[p].position for p in live])
        uv, valid = project_points(intr, kf.pose.inverse().act(positions))
        for j in np.flatnonzero(valid):
            other = live[j]
            if other not in gmap.points:
                continue
            dist = np.linalg.norm(kf.keypoints - uv[j], axis=1)
            for index in np.flatnonzero(dist < cfg.fuse_radius_px):
                pid = int(kf.point_ids[index])
                if pid < 0 or pid == other or pid not in gmap.points:
                    continue
                a, b = gmap.points[pid], gmap.points[other]
                if set(a.observations) & set(b.observations):
                    continue
                ham = int(hamming_matrix(a.descriptor[None, :], b.descriptor[None, :])[0, 0])
                if ham > cfg.fuse_max_hamming:
                    continue
                b_key, b_index = min(b.observations.items())
                if not _reprojects(gmap, pid, b_key, b_index, intr, cfg.fuse_radius_px):
                    continue
                keep, drop = (pid, other) if len(a.observations) >= len(b.observations) else (other, pid)
                gmap.fuse_points(keep, drop)
                fused += 1
                break
    if fused:
        logger.debug(f"[Merge] Fused {fused} duplicate map points")
    return fused


def merge_maps(
    gmap: GlobalMap, edge: LoopEdge, intr: CameraIntrinsics, cfg: CloudConfig
) -> MergeResult | None:
    """Move the smaller of the loop's two components into the larger's frame.

    The alignment makes the candidate keyframe sit at T_wq T_qc. Returns None
    when both ends already share a component.
    """
    root_q = gmap.component(edge.query[0])
    root_c = gmap.component(edge.candidate[0])
    if root_q == root_c:
        return None
    q, c = gmap[edge.query], gmap[edge.candidate]
    # T taking c's component frame into q's
    T_qframe_cframe = q.pose @ edge.relative @ c.pose.inverse()
    if gmap.component_size(root_q) >= gmap.component_size(root_c):
        keep, moved, T = root_q, root_c, T_qframe_cframe
    else:
        keep, moved, T = root_c, root_q, T_qframe_cframe.inverse()
    gmap.transform_component(moved, T)
    gmap.union(keep, moved)
    result = MergeResult(keep, moved, T)
    result.fused = fuse_duplicates(
        gmap, neighbourhood(gmap, edge.query), neighbourhood(gmap, edge.candidate), intr, cfg
    )
    logger.info(
        f"[Cloud] Merged robots {gmap.robots_in(keep)} via loop {edge.query} <-> {edge.candidate} "
        f"({edge.inliers} inliers, {result.fused} points fused)"
    )
    return result
