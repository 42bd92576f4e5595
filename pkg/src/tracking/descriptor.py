"""Steered binary descriptors computed on keyframes only."""

import math

import cv2
import numpy as np

from tracking.errors import PatchOutOfBoundsError
from tracking.features import Keypoint
from tracking.image import Pyramid
from tracking.pattern import PATTERN

DESCRIPTOR_BITS = 256
DESCRIPTOR_BYTES = DESCRIPTOR_BITS // 8
PATCH_RADIUS = 15
_SMOOTH_MARGIN = 2

# BinaryDescriptor: uint8 array of DESCRIPTOR_BYTES, bit k is (byte k // 8) >> (k % 8)
BinaryDescriptor = np.ndarray

_ys, _xs = np.mgrid[-PATCH_RADIUS : PATCH_RADIUS + 1, -PATCH_RADIUS : PATCH_RADIUS + 1]
_DISK = (_xs * _xs + _ys * _ys) <= PATCH_RADIUS * PATCH_RADIUS


def orientation_bin(angle: float, n_theta: int) -> int:
    """Index of the 2*pi/n_theta sector holding `angle` (radians, any range)."""
    step = 2.0 * math.pi / n_theta
    return int(math.floor((angle % (2.0 * math.pi)) / step)) % n_theta


def bin_center(bin_index: int, n_theta: int) -> float:
    return (bin_index + 0.5) * 2.0 * math.pi / n_theta


def _level_center(pyr: Pyramid, kp: Keypoint) -> tuple[np.ndarray, int, int]:
    if not 0 <= kp.level < pyr.num_levels:
        raise PatchOutOfBoundsError(f"Keypoint level {kp.level} not in pyramid")
    img = pyr.levels[kp.level]
    lu, lv = kp.level_coords(pyr.scale_ratio)
    x0, y0 = int(round(lu)), int(round(lv))
    h, w = img.shape
    if not (PATCH_RADIUS <= x0 < w - PATCH_RADIUS and PATCH_RADIUS <= y0 < h - PATCH_RADIUS):
        raise PatchOutOfBoundsError(
            f"Patch around ({x0}, {y0}) leaves level {kp.level} ({w}x{h})"
        )
    return img, x0, y0


def intensity_centroid_angle(patch: np.ndarray) -> float:
    """Angle of the intensity centroid of a (31, 31) patch over the inscribed disk."""
    weights = np.where(_DISK, patch, 0.0)
    m10 = float((weights * _xs).sum())
    m01 = float((weights * _ys).sum())
    return math.atan2(m01, m10)


def compute_descriptor(pyr: Pyramid, kp: Keypoint, n_theta: int = 32) -> tuple[BinaryDescriptor, int]:
    """Descriptor and orientation bin of one keypoint.

    The pattern is rotated by the center angle of the quantized orientation
    bin and sampled (nearest pixel) on a smoothed copy of the patch.

    Raises:
        PatchOutOfBoundsError: the 31x31 patch does not fit inside its level.
    """
    img, x0, y0 = _level_center(pyr, kp)
    r = PATCH_RADIUS
    patch = np.asarray(img[y0 - r : y0 + r + 1, x0 - r : x0 + r + 1], dtype=np.float32)
    theta_bin = orientation_bin(intensity_centroid_angle(patch), n_theta)

    m = r + _SMOOTH_MARGIN
    region = np.asarray(
        img[max(y0 - m, 0) : y0 + m + 1, max(x0 - m, 0) : x0 + m + 1], dtype=np.float32
    )
    pad_top, pad_left = max(m - y0, 0), max(m - x0, 0)
    pad_bottom = 2 * m + 1 - region.shape[0] - pad_top
    pad_right = 2 * m + 1 - region.shape[1] - pad_left
    if pad_top or pad_left or pad_bottom or pad_right:
        region = np.pad(region, ((pad_top, pad_bottom), (pad_left, pad_right)), mode="reflect")
    smooth = cv2.GaussianBlur(region, (5, 5), 2.0, borderType=cv2.BORDER_REFLECT)

    angle = bin_center(theta_bin, n_theta)
    c, s = math.cos(angle), math.sin(angle)
    pts = PATTERN.astype(float)
    x1 = np.rint(c * pts[:, 0] - s * pts[:, 1]).astype(int) + m
    y1 = np.rint(s * pts[:, 0] + c * pts[:, 1]).astype(int) + m
    x2 = np.rint(c * pts[:, 2] - s * pts[:, 3]).astype(int) + m
    y2 = np.rint(s * pts[:, 2] + c * pts[:, 3]).astype(int) + m
    bits = smooth[y1, x1] < smooth[y2, x2]
    return np.packbits(bits, bitorder="little"), theta_bin


def describe_keypoints(
    pyr: Pyramid, keypoints: list[Keypoint], n_theta: int = 32
) -> tuple[list[Keypoint], np.ndarray]:
    """Keypoints with their orientation bins set, plus stacked descriptors (N, 32).

    Keypoints whose patch leaves the image are dropped.
    """
    kept, descs = [], []
    for kp in keypoints:
        try:
            desc, theta_bin = compute_descriptor(pyr, kp, n_theta)
        except PatchOutOfBoundsError:
            continue
        kept.append(Keypoint(kp.u, kp.v, kp.level, theta_bin, kp.score))
        descs.append(desc)
    if not descs:
        return [], np.zeros((0, DESCRIPTOR_BYTES), dtype=np.uint8)
    return kept, np.vstack(descs)


def hamming(a: BinaryDescriptor, b: BinaryDescriptor) -> int:
    return int(np.bitwise_count(np.bitwise_xor(a, b)).sum())


def hamming_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise distances between descriptor sets (N, 32) and (M, 32) -> (N, M)."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)), dtype=np.int64)
    xor = np.bitwise_xor(a[:, None, :], b[None, :, :])
    return np.bitwise_count(xor).sum(axis=2, dtype=np.int64)
