"""Map backbone profiling.

A backbone of keyframes is chosen greedily by map-point coverage under a
spacing constraint. Non-backbone keyframes that cluster around the same
backbone keyframe are summarized by one virtual keyframe holding the best
observation of each point the cluster sees; a member is then removed when
every point it observes keeps at least two observations.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from cloud.bow import bow_vector
from cloud.culling import protected_keyframes
from cloud.global_map import GlobalKeyframe, GlobalMap, KfKey
from config import CloudConfig
from geometry.camera import CameraIntrinsics
from geometry.errors import PointBehindCameraError
from optim.factors import reprojection_residual

logger = logging.getLogger(__name__)


@dataclass
class BackboneResult:
    backbone: list[KfKey] = field(default_factory=list)
    virtual: list[KfKey] = field(default_factory=list)
    removed: list[KfKey] = field(default_factory=list)


def _close(a: GlobalKeyframe, b: GlobalKeyframe, radius: float, angle_deg: float) -> bool:
    return a.pose.translation_error(b.pose) <= radius and a.pose.rotation_error_deg(b.pose) <= angle_deg


def select_backbone(gmap: GlobalMap, keys: list[KfKey], seeds: set[KfKey], cfg: CloudConfig) -> list[KfKey]:
    """Greedy max coverage: repeatedly take the keyframe adding the most unseen points
    among those not within the cluster radius and angle of a chosen one."""
    chosen = [k for k in keys if k in seeds]
    covered: set[int] = set()
    for k in chosen:
        covered.update(int(p) for p in gmap.keyframes[k].point_ids if p >= 0)
    remaining = [k for k in keys if k not in seeds]
    while remaining:
        allowed = [
            k
            for k in remaining
            if not any(
                _close(gmap.keyframes[k], gmap.keyframes[c], cfg.mbp_cluster_radius, cfg.mbp_cluster_angle_deg)
                for c in chosen
            )
        ]
        if not allowed:
            break
        gains = [
            (len({int(p) for p in gmap.keyframes[k].point_ids if p >= 0} - covered), k) for k in allowed
        ]
        gain, best = max(gains, key=lambda g: (g[0], tuple(-x for x in g[1])))
        chosen.append(best)
        covered.update(int(p) for p in gmap.keyframes[best].point_ids if p >= 0)
        remaining.remove(best)
    return chosen


def _observation_error(kf: GlobalKeyframe, index: int, position: np.ndarray, intr: CameraIntrinsics) -> float:
    try:
        e, _, _ = reprojection_residual(kf.state, position, kf.keypoints[index], intr, kf.offset(index))
    except PointBehindCameraError:
        return np.inf
    return float(np.linalg.norm(e))


def build_virtual_keyframe(
    gmap: GlobalMap, members: list[KfKey], intr: CameraIntrinsics
) -> GlobalKeyframe | None:
    """Union of the members' best observations, anchored at the member nearest the cluster centre."""
    kfs = [gmap.keyframes[k] for k in members]
    centre = np.mean([kf.pose.translation for kf in kfs], axis=0)
    anchor = min(kfs, key=lambda kf: (np.linalg.norm(kf.pose.translation - centre), kf.key))
    best: dict[int, tuple[int, float, GlobalKeyframe, int]] = {}
    for kf in kfs:
        for index, pid in enumerate(kf.point_ids):
            if pid < 0:
                continue
            pid = int(pid)
            rank = (int(kf.levels[index]), _observation_error(kf, index, gmap.points[pid].position, intr))
            if pid not in best or rank < best[pid][:2]:
                best[pid] = (*rank, kf, index)
    if not best:
        return None

    pids = sorted(best)
    rows = [best[p] for p in pids]
    anchor_inv = anchor.pose.inverse()
    offsets = []
    for _, _, kf, index in rows:
        source = kf.offset(index)
        T_wc = kf.pose @ source if source is not None else kf.pose
        offsets.append(anchor_inv @ T_wc)
    words = np.array([kf.words[i] for _, _, kf, i in rows], dtype=np.int64)
    key = gmap.next_virtual_key(anchor.robot_id)
    virtual = GlobalKeyframe(
        key=key,
        timestamp=anchor.timestamp,
        state=anchor.state,
        edge_pose=anchor.edge_pose,
        keypoints=np.array([kf.keypoints[i] for _, _, kf, i in rows], dtype=float),
        levels=np.array([kf.levels[i] for _, _, kf, i in rows], dtype=int),
        descriptors=np.array([kf.descriptors[i] for _, _, kf, i in rows], dtype=np.uint8),
        words=words,
        point_ids=np.array(pids, dtype=np.int64),
        bow=bow_vector(words),
        virtual=True,
        offsets=offsets,
    )
    return gmap.add_virtual_keyframe(virtual)


def _removable(gmap: GlobalMap, key: KfKey) -> bool:
    return all(len(gmap.points[int(p)].observations) > 2 for p in gmap.keyframes[key].point_ids if p >= 0)


def map_backbone_profile(gmap: GlobalMap, intr: CameraIntrinsics, cfg: CloudConfig) -> BackboneResult:
    """Select the backbone and replace dense non-backbone clusters by virtual keyframes."""
    result = BackboneResult()
    protected = protected_keyframes(gmap, cfg.cull_keep_recent)
    for robots in gmap.components().values():
        keys = [kf.key for kf in gmap.keyframes_of(robots) if not kf.virtual]
        if not keys:
            continue
        backbone = select_backbone(gmap, keys, protected & set(keys), cfg)
        result.backbone.extend(backbone)
        chosen = set(backbone)

        clusters: dict[KfKey, list[KfKey]] = {}
        for key in keys:
            if key in chosen:
                continue
            kf = gmap.keyframes[key]
            near = [
                b
                for b in backbone
                if _close(kf, gmap.keyframes[b], cfg.mbp_cluster_radius, cfg.mbp_cluster_angle_deg)
            ]
            if not near:
                continue
            home = min(near, key=lambda b: (kf.pose.translation_error(gmap.keyframes[b].pose), b))
            clusters.setdefault(home, []).append(key)

        for home in sorted(clusters):
            members = clusters[home]
            if len(members) < cfg.mbp_min_cluster:
                continue
            virtual = build_virtual_keyframe(gmap, members, intr)
            if virtual is None:
                continue
            result.virtual.append(virtual.key)
            for key in members:
                if _removable(gmap, key):
                    gmap.remove_keyframe(key)
                    result.removed.append(key)
    if result.virtual:
        logger.info(
            f"[Cloud] Backbone of {len(result.backbone)} keyframes; {len(result.virtual)} virtual keyframes "
            f"replace {len(result.removed)}"
        )
    return result
