"""Segment-test corner detection over a scale pyramid with grid bucketing."""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter

from tracking.image import GrayImage, Pyramid, build_pyramid

logger = logging.getLogger(__name__)

# Bresenham circle of radius 3, clockwise from 12 o'clock, as (dx, dy)
CIRCLE = np.array(
    [
        (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
        (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
    ]
)
ARC_LENGTH = 9
# Keeps the 31x31 descriptor patch and its smoothing margin inside the level
BORDER = 18


@dataclass(frozen=True)
class Keypoint:
    """Corner at full-resolution coordinates detected on pyramid level `level`."""

    u: float
    v: float
    level: int = 0
    orientation_bin: int | None = None
    score: float = 0.0

    @property
    def px(self) -> np.ndarray:
        return np.array([self.u, self.v])

    def level_coords(self, scale_ratio: float) -> tuple[float, float]:
        factor = scale_ratio**self.level
        return self.u / factor, self.v / factor


def keypoints_to_array(kps) -> np.ndarray:
    if len(kps) == 0:
        return np.zeros((0, 2))
    return np.array([[kp.u, kp.v] for kp in kps], dtype=float)


def corner_scores(img: np.ndarray, threshold: float) -> np.ndarray:
    """Corner response per pixel, 0 where the segment test fails.

    A pixel passes when ARC_LENGTH contiguous circle pixels are all brighter
    than center + threshold or all darker than center - threshold. The
    response is the summed excess contrast on the passing side, which peaks
    at the exact corner rather than plateauing along the edges.
    """
    a = np.asarray(img, dtype=np.float32)
    h, w = a.shape
    scores = np.zeros((h, w), dtype=np.float32)
    if h < 7 or w < 7:
        return scores
    center = a[3 : h - 3, 3 : w - 3]
    diffs = np.stack([a[3 + dy : h - 3 + dy, 3 + dx : w - 3 + dx] - center for dx, dy in CIRCLE])
    ring = np.concatenate([diffs, diffs[: ARC_LENGTH - 1]], axis=0)

    arc_bright = ring[0:16].copy()
    arc_dark = -ring[0:16]
    for k in range(1, ARC_LENGTH):
        np.minimum(arc_bright, ring[k : k + 16], out=arc_bright)
        np.minimum(arc_dark, -ring[k : k + 16], out=arc_dark)
    bright = arc_bright.max(axis=0) > threshold
    dark = arc_dark.max(axis=0) > threshold

    sum_bright = np.maximum(diffs - threshold, 0.0).sum(axis=0)
    sum_dark = np.maximum(-diffs - threshold, 0.0).sum(axis=0)
    response = np.where(bright, sum_bright, 0.0)
    response = np.maximum(response, np.where(dark, sum_dark, 0.0))
    scores[3 : h - 3, 3 : w - 3] = response
    return scores


def grid_shape(width: int, height: int, grid_cells: int) -> tuple[int, int]:
    """(columns, rows) of the bucketing grid; rows follow the aspect ratio."""
    cols = max(1, grid_cells)
    rows = max(1, int(round(grid_cells * height / width)))
    return cols, rows


def level_quotas(target_count: int, num_levels: int, scale_ratio: float) -> list[int]:
    """Split the target over levels in proportion to level area (largest remainder)."""
    weights = np.array([scale_ratio ** (-2 * level) for level in range(num_levels)])
    exact = target_count * weights / weights.sum()
    quotas = np.floor(exact).astype(int)
    remainder = target_count - int(quotas.sum())
    for idx in np.argsort(-(exact - quotas), kind="stable")[:remainder]:
        quotas[idx] += 1
    return quotas.tolist()


def _bucket(ys, xs, scores, width, height, grid_cells, quota) -> np.ndarray:
    """Indices of the selected candidates; raises the per-cell cap until the quota fills."""
    if quota <= 0 or len(scores) == 0:
        return np.zeros(0, dtype=int)
    cols, rows = grid_shape(width, height, grid_cells)
    cell = (np.minimum(ys * rows // height, rows - 1)) * cols + np.minimum(xs * cols // width, cols - 1)
    # Rank inside each cell by descending score, ties by raster order
    order = np.lexsort((ys * width + xs, -scores, cell))
    sorted_cells = cell[order]
    starts = np.searchsorted(sorted_cells, sorted_cells, side="left")
    rank = np.empty(len(order), dtype=int)
    rank[order] = np.arange(len(order)) - starts

    cap = max(1, math.ceil(quota / (cols * rows)))
    while True:
        chosen = np.flatnonzero(rank < cap)
        if len(chosen) >= quota or len(chosen) == len(scores):
            break
        cap += 1
    if len(chosen) > quota:
        keep = np.lexsort((ys[chosen] * width + xs[chosen], -scores[chosen]))[:quota]
        chosen = chosen[keep]
    return chosen


def detect_level(
    img: np.ndarray, quota: int, grid_cells: int, threshold: float, border: int = BORDER
) -> list[tuple[int, int, float]]:
    """(x, y, score) corners on one level after 3x3 non-maximum suppression."""
    scores = corner_scores(img, threshold)
    h, w = scores.shape
    if h <= 2 * border or w <= 2 * border:
        return []
    peaks = (scores > 0) & (scores == maximum_filter(scores, size=3, mode="constant"))
    peaks[:border, :] = False
    peaks[h - border :, :] = False
    peaks[:, :border] = False
    peaks[:, w - border :] = False
    ys, xs = np.nonzero(peaks)
    vals = scores[ys, xs].astype(float)
    chosen = _bucket(ys, xs, vals, w, h, grid_cells, quota)
    return [(int(xs[i]), int(ys[i]), float(vals[i])) for i in chosen]


def detect_keypoints(
    img: GrayImage | Pyramid,
    target_count: int,
    grid_cells: int = 8,
    threshold: float = 20.0,
    scale_ratio: float = 1.2,
    num_levels: int = 8,
) -> list[Keypoint]:
    """Corners over all pyramid levels, spatially bucketed, deterministic.

    May return fewer than target_count on weakly textured images.
    """
    pyr = img if isinstance(img, Pyramid) else build_pyramid(img, scale_ratio, num_levels)
    quotas = level_quotas(target_count, pyr.num_levels, pyr.scale_ratio)
    keypoints = []
    for level, quota in enumerate(quotas):
        factor = pyr.scale(level)
        for x, y, score in detect_level(pyr.levels[level], quota, grid_cells, threshold):
            keypoints.append(Keypoint(u=x * factor, v=y * factor, level=level, score=score))
    logger.debug(f"[Features] {len(keypoints)}/{target_count} keypoints over {pyr.num_levels} levels")
    return keypoints
