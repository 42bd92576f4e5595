"""Redundant keyframe removal."""

import logging

from cloud.global_map import GlobalMap, KfKey
from config import CloudConfig

logger = logging.getLogger(__name__)


def protected_keyframes(gmap: GlobalMap, keep_recent: int) -> set[KfKey]:
    """Gauge anchors, loop endpoints, virtual keyframes and each robot's newest keyframes."""
    protected = gmap.anchor_keys() | gmap.loop_endpoints()
    protected |= {key for key, kf in gmap.keyframes.items() if kf.virtual}
    for robot_id in gmap.robots():
        real = [kf.key for kf in gmap.keyframes_of(robot_id) if not kf.virtual]
        protected.update(real[-keep_recent:] if keep_recent > 0 else [])
    return protected


def is_redundant(gmap: GlobalMap, key: KfKey, cfg: CloudConfig) -> bool:
    """True when enough of the keyframe's points are seen by cull_min_observers
    other keyframes at an equal or finer level, and none would drop below two observations."""
    kf = gmap.keyframes[key]
    observed = [(index, int(pid)) for index, pid in enumerate(kf.point_ids) if pid >= 0]
    if not observed:
        return True
    redundant = 0
    for index, pid in observed:
        point = gmap.points[pid]
        if len(point.observations) < 3:
            return False
        level = kf.levels[index]
        finer = sum(
            1
            for other, other_index in point.observations.items()
            if other != key and gmap.keyframes[other].levels[other_index] <= level
        )
        redundant += finer >= cfg.cull_min_observers
    return redundant >= cfg.cull_threshold * len(observed)


def cull_redundant_keyframes(gmap: GlobalMap, cfg: CloudConfig) -> int:
    """Remove redundant keyframes oldest first; returns how many were removed."""
    protected = protected_keyframes(gmap, cfg.cull_keep_recent)
    removed = 0
    for key in list(gmap.keyframes):
        if key in protected or key not in gmap.keyframes:
            continue
        if is_redundant(gmap, key, cfg):
            gmap.remove_keyframe(key)
            removed += 1
    if removed:
        logger.info(f"[Cloud] Culled {removed} redundant keyframes, {len(gmap)} remain")
    return removed
