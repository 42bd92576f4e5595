"""Procedurally textured box room rendered by ray casting.

Every face of the room carries its own band-limited noise texture; each
pixel's ray is intersected with the nearest face and the texture is
resampled with OpenCV. Intended for LK and detection tests, not realism.
"""

import logging
from dataclasses import dataclass

import cv2
import numpy as np
from scipy.ndimage import gaussian_filter

from geometry.camera import CameraIntrinsics
from geometry.pose import Pose

logger = logging.getLogger(__name__)

TEXEL_SIZE = 0.01
TEXTURE_SCALES = ((1.0, 1.0), (3.0, 0.8), (9.0, 0.6))


def make_texture(rows: int, cols: int, seed: int) -> np.ndarray:
    """Multi-scale Gaussian-filtered noise mapped to [0, 255] (float32)."""
    rng = np.random.default_rng(seed)
    field = np.zeros((rows, cols))
    for sigma, weight in TEXTURE_SCALES:
        layer = gaussian_filter(rng.standard_normal((rows, cols)), sigma, mode="wrap")
        field += weight * layer / max(float(layer.std()), 1e-12)
    field /= max(float(field.std()), 1e-12)
    return np.clip(128.0 + 45.0 * field, 0.0, 255.0).astype(np.float32)


@dataclass(frozen=True, eq=False)
class Face:
    """Axis-aligned face at coordinate `value` along `axis`; texture spans the other two axes."""

    axis: int
    value: float
    lower: np.ndarray
    texture: np.ndarray

    @property
    def tangent_axes(self) -> tuple[int, int]:
        a, b = (k for k in range(3) if k != self.axis)
        return a, b


class RasterWorld:
    """Room of size (sx, sy, sz) spanning [-sx/2, sx/2] x [-sy/2, sy/2] x [0, sz]."""

    def __init__(self, room_size: tuple[float, float, float], seed: int, texel: float = TEXEL_SIZE):
        self.size = np.asarray(room_size, dtype=float)
        self.lower = np.array([-self.size[0] / 2, -self.size[1] / 2, 0.0])
        self.upper = self.lower + self.size
        self.texel = texel
        self.faces: list[Face] = []
        for axis in range(3):
            for side, value in enumerate((self.lower[axis], self.upper[axis])):
                a, b = (k for k in range(3) if k != axis)
                cols = int(np.ceil(self.size[a] / texel)) + 1
                rows = int(np.ceil(self.size[b] / texel)) + 1
                texture = make_texture(rows, cols, seed * 6 + 2 * axis + side)
                self.faces.append(Face(axis, float(value), self.lower.copy(), texture))
        logger.debug(f"[Raster] Built {len(self.faces)} textured faces for a {tuple(self.size)} m room")

    def render(self, T_wc: Pose, intr: CameraIntrinsics) -> np.ndarray:
        """8-bit grayscale view from camera pose T_wc; the camera must be inside the room."""
        centre = T_wc.translation
        if np.any(centre <= self.lower) or np.any(centre >= self.upper):
            raise ValueError(f"Camera at {centre} is outside the room")
        vs, us = np.mgrid[0 : intr.height, 0 : intr.width]
        uv = np.column_stack([us.reshape(-1), vs.reshape(-1)]).astype(float)
        rays = intr.backproject(uv, 1.0) @ T_wc.rotation.T

        distance = np.full((len(self.faces), len(rays)), np.inf)
        for k, face in enumerate(self.faces):
            d = rays[:, face.axis]
            with np.errstate(divide="ignore", invalid="ignore"):
                lam = (face.value - centre[face.axis]) / d
            distance[k] = np.where(np.isfinite(lam) & (lam > 0), lam, np.inf)
        nearest = np.argmin(distance, axis=0)
        hit = centre + rays * distance[nearest, np.arange(len(rays))][:, None]

        image = np.zeros(len(rays), dtype=np.float32)
        for k, face in enumerate(self.faces):
            mask = nearest == k
            if not mask.any():
                continue
            a, b = face.tangent_axes
            map_x = np.zeros(len(rays), dtype=np.float32)
            map_y = np.zeros(len(rays), dtype=np.float32)
            map_x[mask] = (hit[mask, a] - face.lower[a]) / self.texel
            map_y[mask] = (hit[mask, b] - face.lower[b]) / self.texel
            sampled = cv2.remap(
                face.texture,
                map_x.reshape(intr.height, intr.width),
                map_y.reshape(intr.height, intr.width),
                interpolation=cv2.INTER_LINEAR,
                borderMode=cv2.BORDER_REFLECT,
            )
            image[mask] = sampled.reshape(-1)[mask]
        return np.clip(np.rint(image), 0, 255).astype(np.uint8).reshape(intr.height, intr.width)


def warp_image(image: np.ndarray, homography: np.ndarray) -> np.ndarray:
    """Apply a pixel homography (reference -> warped) with bilinear resampling."""
    h, w = image.shape[:2]
    return cv2.warpPerspective(
        image, np.asarray(homography, dtype=float), (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT
    )


def apply_homography(homography: np.ndarray, pixels: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pixels, dtype=float))
    mapped = cv2.perspectiveTransform(pts.reshape(-1, 1, 2), np.asarray(homography, dtype=float))
    return mapped.reshape(-1, 2)
