"""Grayscale images and scale pyramids."""

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from tracking.errors import ImageTooSmallError

logger = logging.getLogger(__name__)

# Row-major 8-bit (or float32 for derived levels) intensity grid, shape (height, width)
GrayImage = np.ndarray

MIN_LEVEL_SIZE = 16


def level_shape(width: int, height: int, scale_ratio: float, level: int) -> tuple[int, int]:
    """(width, height) of pyramid level `level`: floor(base / scale_ratio**level)."""
    factor = scale_ratio**level
    return int(math.floor(width / factor + 1e-9)), int(math.floor(height / factor + 1e-9))


def as_gray(img: np.ndarray) -> GrayImage:
    arr = np.asarray(img)
    if arr.ndim == 3:
        arr = cv2.cvtColor(arr, cv2.COLOR_BGR2GRAY)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"Expected a non-empty 2-D image, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class Pyramid:
    levels: tuple[np.ndarray, ...]
    scale_ratio: float = 1.2

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    @property
    def base_shape(self) -> tuple[int, int]:
        h, w = self.levels[0].shape
        return w, h

    def scale(self, level: int) -> float:
        return self.scale_ratio**level


def build_pyramid(img: GrayImage, scale_ratio: float = 1.2, num_levels: int = 8) -> Pyramid:
    """Level 0 is the input; coarser levels are resized from the base image.

    Levels are float32. A light Gaussian pre-filter proportional to the
    level's scale limits aliasing before the bilinear resize.

    Raises:
        ImageTooSmallError: base smaller than scale_ratio**(num_levels-1) * 16 px.
    """
    base = as_gray(img)
    height, width = base.shape
    required = scale_ratio ** (num_levels - 1) * MIN_LEVEL_SIZE
    if min(width, height) < required:
        raise ImageTooSmallError(width, height, required)

    base_f = base.astype(np.float32)
    levels = [base_f]
    for level in range(1, num_levels):
        w, h = level_shape(width, height, scale_ratio, level)
        sigma = 0.5 * math.sqrt(scale_ratio ** (2 * level) - 1.0)
        smoothed = cv2.GaussianBlur(base_f, (0, 0), sigmaX=sigma, borderType=cv2.BORDER_REFLECT)
        levels.append(cv2.resize(smoothed, (w, h), interpolation=cv2.INTER_LINEAR))
    return Pyramid(levels=tuple(levels), scale_ratio=scale_ratio)


def load_gray(path: str | Path) -> GrayImage:
    """Read an 8-bit grayscale image (PGM P5, PNG, ...)."""
    img = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if img is None:
        raise FileNotFoundError(f"Cannot read image: {path}")
    return img


def save_gray(path: str | Path, img: GrayImage) -> None:
    out = np.clip(np.rint(np.asarray(img, dtype=float)), 0, 255).astype(np.uint8)
    if not cv2.imwrite(str(path), out):
        raise OSError(f"Cannot write image: {path}")
    logger.debug(f"[Image] Wrote {out.shape[1]}x{out.shape[0]} image to {path}")
