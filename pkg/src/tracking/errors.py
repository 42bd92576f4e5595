class TrackingError(RuntimeError):
    """Base class for front-end failures."""


class ImageTooSmallError(TrackingError):
    def __init__(self, width: int, height: int, required: float):
        self.width = width
        self.height = height
        super().__init__(f"Image {width}x{height} is smaller than the {required:.0f} px pyramid minimum")


class PatchOutOfBoundsError(TrackingError):
    """The descriptor patch around a keypoint leaves its pyramid level."""


class InsufficientCorrespondencesError(TrackingError):
    def __init__(self, count: int, required: int = 4):
        self.count = count
        super().__init__(f"{count} correspondences, at least {required} required")


class NoConsensusError(TrackingError):
    def __init__(self, ratio: float, minimum: float):
        self.ratio = ratio
        super().__init__(f"Best inlier ratio {ratio:.2f} below {minimum:.2f}")


class PnPDivergenceError(TrackingError):
    """Damped Gauss-Newton kept increasing the reprojection cost."""


class TrackingLostError(TrackingError):
    def __init__(self, inliers: int, minimum: int):
        self.inliers = inliers
        super().__init__(f"Tracking lost: {inliers} inliers (< {minimum})")
