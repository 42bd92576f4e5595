"""Per-level image dimensions as seen by the codec."""

import math
from dataclasses import dataclass

from config import CodecConfig
from tracking.features import Keypoint
from tracking.image import level_shape


def field_width(size: int) -> int:
    """Bits of a fixed-width field holding values in [0, size)."""
    return max(0, math.ceil(math.log2(size))) if size > 1 else 0


@dataclass(frozen=True)
class PyramidGeometry:
    """W(sigma), H(sigma) for every level; level dims are floor(base / scale_ratio**sigma)."""

    widths: tuple[int, ...]
    heights: tuple[int, ...]
    scale_ratio: float

    @classmethod
    def from_config(cls, cfg: CodecConfig) -> "PyramidGeometry":
        return cls.build(cfg.base_width, cfg.base_height, cfg.scale_ratio, cfg.n_sigma)

    @classmethod
    def build(cls, width: int, height: int, scale_ratio: float, n_sigma: int) -> "PyramidGeometry":
        dims = [level_shape(width, height, scale_ratio, level) for level in range(n_sigma)]
        return cls(tuple(w for w, _ in dims), tuple(h for _, h in dims), scale_ratio)

    @property
    def n_sigma(self) -> int:
        return len(self.widths)

    def width(self, level: int) -> int:
        return self.widths[level]

    def height(self, level: int) -> int:
        return self.heights[level]

    def quantize(self, kp: Keypoint) -> tuple[int, int, int]:
        """(level, u_sigma, v_sigma) with coordinates rounded at the keypoint's level."""
        level = min(max(int(kp.level), 0), self.n_sigma - 1)
        factor = self.scale_ratio**level
        u = min(max(int(round(kp.u / factor)), 0), self.widths[level] - 1)
        v = min(max(int(round(kp.v / factor)), 0), self.heights[level] - 1)
        return level, u, v

    def dequantize(self, level: int, u: int, v: int) -> tuple[float, float]:
        factor = self.scale_ratio**level
        return u * factor, v * factor
