class EdgeError(RuntimeError):
    """Base class for edge VIO failures."""


class InsufficientParallaxError(EdgeError):
    def __init__(self, parallax_deg: float, required_deg: float, correspondences: int = 0):
        self.parallax_deg = parallax_deg
        self.correspondences = correspondences
        super().__init__(
            f"Median parallax {parallax_deg:.2f} deg over {correspondences} correspondences "
            f"(need {required_deg:.2f} deg)"
        )


class ExcitationTooLowError(EdgeError):
    def __init__(self, accel_std: float, required: float):
        self.accel_std = accel_std
        super().__init__(f"Accelerometer std {accel_std:.4f} m/s^2 below {required:.4f}")


class InertialInitError(EdgeError):
    """Inertial initialization could not produce a usable estimate."""


class SessionSetupError(EdgeError):
    """A robot sent data before a valid SessionSetup."""
