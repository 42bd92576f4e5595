"""Keypoint prediction and pyramidal inverse-compositional Lucas-Kanade."""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from geometry.camera import DEPTH_EPSILON, CameraIntrinsics, project_points
from geometry.pose import Pose
from tracking.image import Pyramid

logger = logging.getLogger(__name__)

_CONVERGED = 0.01


class MatchStatus(str, Enum):
    TRACKED = "tracked"
    REJECTED_ROTATION = "rejected_rotation"
    REJECTED_RANSAC = "rejected_ransac"
    LOST = "lost"


@dataclass(frozen=True, eq=False)
class Match:
    ref_index: int
    cur_index: int
    ref_px: np.ndarray
    cur_px: np.ndarray
    status: MatchStatus = MatchStatus.TRACKED

    @property
    def displacement(self) -> np.ndarray:
        return np.asarray(self.cur_px) - np.asarray(self.ref_px)

    def with_status(self, status: MatchStatus) -> "Match":
        return Match(self.ref_index, self.cur_index, self.ref_px, self.cur_px, status)


def count_status(matches: list[Match], status: MatchStatus) -> int:
    return sum(1 for m in matches if m.status == status)


def predict_keypoints(
    ref_px: np.ndarray,
    depths: np.ndarray,
    T_rc: Pose,
    intr: CameraIntrinsics,
    depth_epsilon: float = DEPTH_EPSILON,
) -> tuple[np.ndarray, np.ndarray]:
    """Where reference keypoints should appear in the current frame.

    Args:
        ref_px: (N, 2) reference pixels.
        depths: (N,) depth along the reference optical axis; NaN or <= 0 means unknown.
        T_rc: current camera expressed in the reference camera frame.

    Returns:
        (predictions (N, 2), valid mask). Keypoints without depth keep their
        reference pixel; points that land behind the current camera are invalid
        and also keep their reference pixel.
    """
    ref_px = np.atleast_2d(np.asarray(ref_px, dtype=float))
    depths = np.asarray(depths, dtype=float).reshape(-1)
    pred = ref_px.copy()
    valid = np.ones(len(ref_px), dtype=bool)
    has_depth = np.isfinite(depths) & (depths > depth_epsilon)
    if not has_depth.any():
        return pred, valid

    X_r = intr.backproject(ref_px[has_depth], depths[has_depth])
    X_c = T_rc.inverse().act(X_r)
    uv, ok = project_points(intr, X_c, depth_epsilon)
    idx = np.flatnonzero(has_depth)
    pred[idx[ok]] = uv[ok]
    valid[idx[~ok]] = False
    return pred, valid


def _bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample img at float coordinates, replicating the border."""
    h, w = img.shape
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.intp), w - 2)
    y0 = np.minimum(np.floor(y).astype(np.intp), h - 2)
    ax = x - x0
    ay = y - y0
    top = img[y0, x0] * (1.0 - ax) + img[y0, x0 + 1] * ax
    bottom = img[y0 + 1, x0] * (1.0 - ax) + img[y0 + 1, x0 + 1] * ax
    return top * (1.0 - ay) + bottom * ay


def _gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gy, gx = np.gradient(np.asarray(img, dtype=np.float64))
    return gx, gy


def lk_track(
    pyr_r: Pyramid,
    pyr_c: Pyramid,
    kps: np.ndarray,
    predictions: np.ndarray,
    window: int = 21,
    max_iters: int = 30,
    max_residual: float = 20.0,
    min_eigen: float = 1e-4,
) -> list[Match]:
    """Coarse-to-fine translation LK for every keypoint, vectorized over points.

    Each point starts at the coarsest level from its scaled prediction and is
    refined per level with inverse-compositional Gauss-Newton. A point is LOST
    when it leaves the image, its final mean absolute residual exceeds
    max_residual, or its level-0 window is textureless (normalized minimum
    Hessian eigenvalue below min_eigen).
    """
    kps = np.atleast_2d(np.asarray(kps, dtype=float)).reshape(-1, 2)
    predictions = np.atleast_2d(np.asarray(predictions, dtype=float)).reshape(-1, 2)
    n = len(kps)
    if n == 0:
        return []

    half = window // 2
    oy, ox = np.mgrid[-half : half + 1, -half : half + 1]
    ox = ox.reshape(-1).astype(float)
    oy = oy.reshape(-1).astype(float)
    area = float(len(ox))

    ratio = pyr_r.scale_ratio
    top = min(pyr_r.num_levels, pyr_c.num_levels) - 1
    disp = (predictions - kps) / ratio**top
    lost = np.zeros(n, dtype=bool)
    residual = np.zeros(n)

    for level in range(top, -1, -1):
        if level < top:
            disp = disp * ratio
        scale = ratio**level
        ref_img = pyr_r.levels[level]
        cur_img = pyr_c.levels[level]
        h, w = cur_img.shape
        gx_img, gy_img = _gradients(ref_img)

        px = kps[:, 0:1] / scale + ox
        py = kps[:, 1:2] / scale + oy
        template = _bilinear(ref_img, px, py)
        gx = _bilinear(gx_img, px, py)
        gy = _bilinear(gy_img, px, py)
        hxx = (gx * gx).sum(axis=1)
        hxy = (gx * gy).sum(axis=1)
        hyy = (gy * gy).sum(axis=1)
        det = hxx * hyy - hxy * hxy
        trace_half = 0.5 * (hxx + hyy)
        min_eig = trace_half - np.sqrt(np.maximum(trace_half**2 - det, 0.0))
        textured = min_eig / (area * 255.0 * 255.0) >= min_eigen
        if level == 0:
            lost |= ~textured

        active = textured & ~lost
        safe_det = np.where(textured, det, 1.0)
        for _ in range(max_iters):
            if not active.any():
                break
            idx = np.flatnonzero(active)
            wx = px[idx] + disp[idx, 0:1]
            wy = py[idx] + disp[idx, 1:2]
            err = _bilinear(cur_img, wx, wy) - template[idx]
            bx = (gx[idx] * err).sum(axis=1)
            by = (gy[idx] * err).sum(axis=1)
            d = safe_det[idx]
            step_x = (hyy[idx] * bx - hxy[idx] * by) / d
            step_y = (hxx[idx] * by - hxy[idx] * bx) / d
            disp[idx, 0] -= step_x
            disp[idx, 1] -= step_y

            cx = kps[idx, 0] / scale + disp[idx, 0]
            cy = kps[idx, 1] / scale + disp[idx, 1]
            outside = ~np.isfinite(cx) | (cx < 0) | (cy < 0) | (cx > w - 1) | (cy > h - 1)
            lost[idx[outside]] = True
            done = np.hypot(step_x, step_y) < _CONVERGED
            active[idx[outside | done]] = False

        if level == 0:
            final = _bilinear(cur_img, px + disp[:, 0:1], py + disp[:, 1:2])
            residual = np.abs(final - template).mean(axis=1)

    lost |= ~np.isfinite(residual) | (residual > max_residual)
    cur = kps + disp
    matches = [
        Match(
            ref_index=i,
            cur_index=i,
            ref_px=kps[i],
            cur_px=cur[i],
            status=MatchStatus.LOST if lost[i] else MatchStatus.TRACKED,
        )
        for i in range(n)
    ]
    logger.debug(f"[Flow] LK tracked {int((~lost).sum())}/{n}")
    return matches
