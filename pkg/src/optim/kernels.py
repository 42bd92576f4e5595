"""Robust loss kernels, expressed on the squared (whitened) residual s = r^2.

Both kernels satisfy cost(0) = 0 and weight(0) = 1, where the weight is the
IRLS factor dcost/ds.
"""

from dataclasses import dataclass

import numpy as np

from config import KernelKind


@dataclass(frozen=True)
class RobustKernel:
    kind: KernelKind
    delta: float

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError(f"Kernel delta must be > 0, got {self.delta}")

    def evaluate(self, s: np.ndarray | float) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized (cost, weight) for squared residuals `s`."""
        s = np.maximum(np.asarray(s, dtype=float), 0.0)
        d2 = self.delta * self.delta
        if self.kind == KernelKind.HUBER:
            root = np.sqrt(s)
            inside = s <= d2
            cost = np.where(inside, s, 2.0 * self.delta * root - d2)
            weight = np.where(inside, 1.0, self.delta / np.maximum(root, 1e-300))
            return cost, weight
        cost = d2 * np.log1p(s / d2)
        weight = 1.0 / (1.0 + s / d2)
        return cost, weight


def robust_cost(r_squared: float, kernel: RobustKernel | None) -> tuple[float, float]:
    """(cost, weight) of one squared residual; no kernel means plain least squares."""
    if r_squared < 0:
        raise ValueError(f"r_squared must be >= 0, got {r_squared}")
    if kernel is None:
        return float(r_squared), 1.0
    cost, weight = kernel.evaluate(r_squared)
    return float(cost), float(weight)
