class ImuError(ValueError):
    """Base class for IMU processing failures."""


class ImuBatchError(ImuError):
    """Empty batch, non-monotone timestamps or an interval that cannot be inferred."""


class NoSamplesInWindowError(ImuError):
    """No gyro sample falls strictly inside the requested time window."""

    def __init__(self, t_i: float, t_j: float):
        self.t_i = t_i
        self.t_j = t_j
        super().__init__(f"No IMU samples in ({t_i:.6f}, {t_j:.6f})")
