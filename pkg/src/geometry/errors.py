class GeometryError(ValueError):
    """Base class for geometry failures."""


class PointBehindCameraError(GeometryError):
    """A point does not lie in front of the camera (Z <= depth epsilon)."""

    def __init__(self, depth: float, depth_epsilon: float):
        self.depth = depth
        super().__init__(f"Point depth {depth:.3g} m is not beyond {depth_epsilon:.1g} m")
