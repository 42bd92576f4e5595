class CloudError(RuntimeError):
    """Base class for global-map failures."""


class InsufficientInliersError(CloudError):
    def __init__(self, count: int, required: int):
        self.count = count
        self.required = required
        super().__init__(f"Geometric verification found {count} inliers, need {required}")


class UnknownKeyframeError(CloudError):
    def __init__(self, key):
        self.key = key
        super().__init__(f"Keyframe {key} is not in the global map")
