"""Loop candidate search and geometric verification.

Intra- and inter-robot loops go through the same path; only the temporal
exclusion differs, since robots do not share a clock.
"""

import logging
from dataclasses import dataclass

import numpy as np

from cloud.errors import InsufficientInliersError
from cloud.global_map import GlobalKeyframe, GlobalMap, KfKey
from config import CloudConfig, TrackingConfig
from edge.matching import match_by_words
from geometry.camera import CameraIntrinsics
from geometry.pose import Pose
from tracking.errors import InsufficientCorrespondencesError, NoConsensusError, PnPDivergenceError
from tracking.geometric import ransac_filter, solve_pnp

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LoopCandidate:
    key: KfKey
    score: float
    threshold: float


def detect_loop(query: KfKey, gmap: GlobalMap, cfg: CloudConfig) -> LoopCandidate | None:
    """Best BoW match outside the query's covisible neighbourhood, or None.

    The acceptance bar is loop_alpha times the best covisible neighbour's
    score, never below loop_min_score. Same-robot candidates within
    temporal_exclusion seconds are skipped; ties go to the lower key.
    """
    kf = gmap[query]
    if not kf.bow:
        return None
    covisible = {k for k, w in gmap.covisibility(query).items() if w > 0}
    excluded = covisible | {query}
    for other in gmap.keyframes.values():
        if other.robot_id == kf.robot_id and abs(other.timestamp - kf.timestamp) <= cfg.temporal_exclusion:
            excluded.add(other.key)

    best_covisible = max(
        (s for s, k in gmap.database.query(kf.bow) if k in covisible),
        default=0.0,
    )
    threshold = max(cfg.loop_alpha * best_covisible, cfg.loop_min_score)
    for score, key in gmap.database.query(kf.bow, exclude=excluded):
        if score <= threshold:
            break
        logger.debug(f"[Loop] Candidate {key} for {query}: score {score:.3f} > {threshold:.3f}")
        return LoopCandidate(key, score, threshold)
    return None


def _one_direction(
    observer: GlobalKeyframe,
    mapper: GlobalKeyframe,
    gmap: GlobalMap,
    intr: CameraIntrinsics,
    cloud: CloudConfig,
    tracking: TrackingConfig,
    max_hamming: int,
    ratio: float,
) -> tuple[Pose, int]:
    """Observer camera pose T_wc in the mapper's world frame, from mapper points seen in observer pixels."""
    mapped = np.flatnonzero(mapper.point_ids >= 0)
    pairs = match_by_words(
        observer.words,
        observer.descriptors,
        mapper.words[mapped],
        mapper.descriptors[mapped],
        max_hamming,
        ratio,
    )
    if len(pairs) < cloud.min_loop_inliers:
        raise InsufficientInliersError(len(pairs), cloud.min_loop_inliers)
    points_w = np.array([gmap.points[int(mapper.point_ids[mapped[j]])].position for j in pairs[:, 1]])
    pixels = observer.keypoints[pairs[:, 0]]
    try:
        inliers, T_cw = ransac_filter(
            points_w,
            pixels,
            intr,
            iterations=max(tracking.ransac_iterations, 200),
            reproj_threshold=tracking.ransac_reproj_threshold,
            seed=abs(hash((observer.key, mapper.key))) % (1 << 32),
            min_inlier_ratio=0.0,
        )
    except (InsufficientCorrespondencesError, NoConsensusError):
        raise InsufficientInliersError(0, cloud.min_loop_inliers) from None
    if len(inliers) < cloud.min_loop_inliers:
        raise InsufficientInliersError(len(inliers), cloud.min_loop_inliers)
    try:
        T_cw = solve_pnp(points_w[inliers], pixels[inliers], intr, T_cw)
    except PnPDivergenceError:
        pass
    return T_cw.inverse(), len(inliers)


def compute_relative_pose(
    query: KfKey,
    candidate: KfKey,
    gmap: GlobalMap,
    intr: CameraIntrinsics,
    cloud: CloudConfig,
    tracking: TrackingConfig,
    max_hamming: int = 64,
    ratio: float = 0.8,
) -> tuple[Pose, int]:
    """T_qc = T_wq^-1 T_wc and its inlier count, verified in both directions.

    Each keyframe is localized against the other's map points; the two
    estimates of T_qc must agree within the cross-check tolerances.

    Raises:
        InsufficientInliersError: either direction falls short of
            min_loop_inliers, or the two directions disagree.
    """
    q, c = gmap[query], gmap[candidate]
    if query == candidate:
        return Pose.identity(), int((q.point_ids >= 0).sum())

    # q localized in c's frame
    T_wq_c, n_qc = _one_direction(q, c, gmap, intr, cloud, tracking, max_hamming, ratio)
    T_qc_a = T_wq_c.inverse() @ c.pose
    # c localized in q's frame
    T_wc_q, n_cq = _one_direction(c, q, gmap, intr, cloud, tracking, max_hamming, ratio)
    T_qc_b = q.pose.inverse() @ T_wc_q

    rot_gap = T_qc_a.rotation_error_deg(T_qc_b)
    trans_gap = T_qc_a.translation_error(T_qc_b)
    trans_tol = cloud.cross_check_translation * max(1.0, float(np.linalg.norm(T_qc_a.translation)))
    if rot_gap > cloud.cross_check_rotation_deg or trans_gap > trans_tol:
        logger.debug(
            f"[Loop] {query} <-> {candidate} cross-check failed: {rot_gap:.2f} deg, {trans_gap:.3f} m"
        )
        raise InsufficientInliersError(min(n_qc, n_cq), cloud.min_loop_inliers)
    if n_qc >= n_cq:
        return T_qc_a, n_qc
    return T_qc_b, n_cq
