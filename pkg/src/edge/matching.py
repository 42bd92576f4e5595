"""Descriptor association: brute force, word-bucketed and projection-guided."""

from collections import defaultdict

import numpy as np

from geometry.camera import CameraIntrinsics, project_points
from geometry.pose import Pose
from tracking.descriptor import hamming_matrix

_NO_MATCH = np.zeros((0, 2), dtype=int)


def _ratio_filter(dist: np.ndarray, max_hamming: int, ratio: float) -> tuple[np.ndarray, np.ndarray]:
    """Best column per row and a mask of rows that pass the distance and ratio tests."""
    best = np.argmin(dist, axis=1)
    best_d = dist[np.arange(len(dist)), best]
    ok = best_d <= max_hamming
    if dist.shape[1] > 1:
        second = np.partition(dist, 1, axis=1)[:, 1]
        ok &= best_d < ratio * second
    return best, ok


def match_descriptors(
    desc_a: np.ndarray, desc_b: np.ndarray, max_hamming: int = 64, ratio: float = 0.8
) -> np.ndarray:
    """Mutual nearest neighbours passing the ratio test, as (M, 2) index pairs."""
    if len(desc_a) == 0 or len(desc_b) == 0:
        return _NO_MATCH
    dist = hamming_matrix(desc_a, desc_b)
    best_ab, ok = _ratio_filter(dist, max_hamming, ratio)
    best_ba = np.argmin(dist, axis=0)
    pairs = [(i, int(best_ab[i])) for i in np.flatnonzero(ok) if best_ba[best_ab[i]] == i]
    return np.array(pairs, dtype=int).reshape(-1, 2)


def match_by_words(
    words_a: np.ndarray,
    desc_a: np.ndarray,
    words_b: np.ndarray,
    desc_b: np.ndarray,
    max_hamming: int = 64,
    ratio: float = 0.8,
    min_matches: int = 20,
) -> np.ndarray:
    """Match within shared vocabulary words; falls back to brute force when buckets yield too few."""
    buckets_b: dict[int, list[int]] = defaultdict(list)
    for j, w in enumerate(words_b):
        buckets_b[int(w)].append(j)
    pairs = []
    taken: set[int] = set()
    for i, w in enumerate(words_a):
        cand = buckets_b.get(int(w))
        if not cand:
            continue
        d = hamming_matrix(desc_a[i : i + 1], desc_b[cand])[0]
        order = np.argsort(d, kind="stable")
        j = cand[int(order[0])]
        if d[order[0]] > max_hamming or j in taken:
            continue
        if len(order) > 1 and not d[order[0]] < ratio * d[order[1]]:
            continue
        taken.add(j)
        pairs.append((i, j))
    if len(pairs) >= min_matches:
        return np.array(pairs, dtype=int)
    return match_descriptors(desc_a, desc_b, max_hamming, ratio)


def match_by_projection(
    pixels: np.ndarray,
    levels: np.ndarray,
    descriptors: np.ndarray,
    T_cw: Pose,
    point_ids: np.ndarray,
    positions: np.ndarray,
    point_descriptors: np.ndarray,
    intr: CameraIntrinsics,
    radius: float = 15.0,
    max_hamming: int = 64,
    scale_ratio: float = 1.2,
) -> dict[int, int]:
    """Keypoint index -> map point id for map points projecting near a keypoint.

    The search radius grows with the keypoint's pyramid scale. Each keypoint
    takes the closest descriptor among projected candidates; a map point is
    assigned at most once, to its best keypoint.
    """
    if len(pixels) == 0 or len(point_ids) == 0:
        return {}
    uv, valid = project_points(intr, T_cw.act(positions))
    valid &= intr.contains(np.nan_to_num(uv, nan=-1.0))
    cand = np.flatnonzero(valid)
    if len(cand) == 0:
        return {}
    dist_px = np.linalg.norm(pixels[:, None, :] - uv[None, cand, :], axis=2)
    limit = radius * np.power(scale_ratio, np.asarray(levels, dtype=float))[:, None]
    ham = hamming_matrix(descriptors, point_descriptors[cand]).astype(float)
    ham[(dist_px > limit) | (ham > max_hamming)] = np.inf

    best_for_point: dict[int, tuple[float, int]] = {}
    for k in range(len(pixels)):
        j = int(np.argmin(ham[k]))
        d = ham[k, j]
        if not np.isfinite(d):
            continue
        pid = int(point_ids[cand[j]])
        if pid not in best_for_point or d < best_for_point[pid][0]:
            best_for_point[pid] = (d, k)
    return {k: pid for pid, (_, k) in best_for_point.items()}
