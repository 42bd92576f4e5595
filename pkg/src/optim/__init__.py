"""Nonlinear least squares shared by the edge and the cloud."""

from optim.errors import SolverDegenerateError, SolverError
from optim.factors import (
    BiasPriorFactor,
    BiasWalkFactor,
    Factor,
    ImuFactor,
    PriorFactor,
    RelativePoseFactor,
    ReprojectionFactor,
    reprojection_residual,
)
from optim.kernels import RobustKernel, robust_cost
from optim.solver import Problem, SolverResult, evaluate_cost, levenberg_marquardt

__all__ = [
    "BiasPriorFactor",
    "BiasWalkFactor",
    "Factor",
    "ImuFactor",
    "PriorFactor",
    "Problem",
    "RelativePoseFactor",
    "ReprojectionFactor",
    "RobustKernel",
    "SolverDegenerateError",
    "SolverError",
    "SolverResult",
    "evaluate_cost",
    "levenberg_marquardt",
    "reprojection_residual",
    "robust_cost",
]
