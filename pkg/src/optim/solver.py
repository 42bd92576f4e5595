"""Levenberg-Marquardt over pose and point variables with Schur elimination of points."""

import logging
from dataclasses import dataclass, field
from typing import Hashable

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from imu.types import NavState
from optim.errors import SolverDegenerateError
from optim.factors import Factor, PriorFactor, RelativePoseFactor

logger = logging.getLogger(__name__)

Key = Hashable


@dataclass
class SolverResult:
    initial_cost: float
    final_cost: float
    iterations: int = 0
    accepted: int = 0
    converged: bool = False
    costs: list[float] = field(default_factory=list)


class Problem:
    """Variables, their fixed flags and the factors over them.

    Pose variables carry a dimension: 6 optimizes rotation and position only,
    15 also velocity and biases. Fixed variables enter as constants.
    """

    def __init__(self):
        self.poses: dict[Key, NavState] = {}
        self.pose_dims: dict[Key, int] = {}
        self.points: dict[Key, np.ndarray] = {}
        self.fixed: set[Key] = set()
        self.factors: list[Factor] = []

    def add_pose(self, key: Key, state: NavState, dim: int = 6, fixed: bool = False) -> None:
        if dim not in (6, 15):
            raise ValueError(f"Pose dimension must be 6 or 15, got {dim}")
        self.poses[key] = state
        self.pose_dims[key] = dim
        if fixed:
            self.fixed.add(key)

    def add_point(self, key: Key, xyz: np.ndarray, fixed: bool = False) -> None:
        self.points[key] = np.array(xyz, dtype=float).reshape(3)
        if fixed:
            self.fixed.add(key)

    def add_factor(self, factor: Factor) -> None:
        for key in factor.keys:
            if key not in self.poses and key not in self.points:
                raise KeyError(f"Factor references unknown variable {key!r}")
        self.factors.append(factor)

    def values(self) -> dict[Key, NavState | np.ndarray]:
        return {**self.poses, **self.points}

    def free_poses(self) -> list[Key]:
        return [k for k in self.poses if k not in self.fixed]

    def free_points(self) -> list[Key]:
        return [k for k in self.points if k not in self.fixed]

    def has_gauge_anchor(self) -> bool:
        if any(k in self.fixed for k in self.poses):
            return True
        return any(isinstance(f, PriorFactor) for f in self.factors)


def evaluate_cost(problem: Problem) -> float:
    """Total robust cost; inactive factors contribute nothing."""
    values = problem.values()
    total = 0.0
    for factor in problem.factors:
        lin = factor.linearize(values)
        if lin is None:
            continue
        s = factor.whitened_sq(lin[0])
        total += float(factor.kernel.evaluate(s)[0]) if factor.kernel else s
    return total


class _Layout:
    def __init__(self, problem: Problem):
        self.pose_offsets: dict[Key, int] = {}
        offset = 0
        for key in problem.free_poses():
            self.pose_offsets[key] = offset
            offset += problem.pose_dims[key]
        self.pose_size = offset
        self.point_index = {key: i for i, key in enumerate(problem.free_points())}


def _build_system(problem: Problem, layout: _Layout):
    """Accumulate the (robustly reweighted) normal equations H dx = b with b = -J^T W r."""
    values = problem.values()
    n_pts = len(layout.point_index)
    h_pp = np.zeros((layout.pose_size, layout.pose_size))
    b_p = np.zeros(layout.pose_size)
    h_ll = np.zeros((n_pts, 3, 3))
    b_l = np.zeros((n_pts, 3))
    h_pl: dict[tuple[Key, int], np.ndarray] = {}
    cost = 0.0

    for factor in problem.factors:
        lin = factor.linearize(values)
        if lin is None:
            continue
        r, jacobians = lin
        s = factor.whitened_sq(r)
        if factor.kernel is None:
            c, w = s, 1.0
        else:
            c, w = factor.kernel.evaluate(s)
            c, w = float(c), float(w)
        cost += c
        info = factor.information
        w_info = w * (np.diag(info) if info.ndim == 1 else info)

        blocks = []
        for key, jac in zip(factor.keys, jacobians):
            if key in layout.pose_offsets:
                dim = problem.pose_dims[key]
                blocks.append(("p", key, jac[:, :dim]))
            elif key in layout.point_index:
                blocks.append(("l", layout.point_index[key], jac))
        for kind_a, key_a, j_a in blocks:
            wj_a = w_info @ j_a
            g = -(j_a.T @ w_info @ r)
            if kind_a == "p":
                o_a = layout.pose_offsets[key_a]
                b_p[o_a : o_a + j_a.shape[1]] += g
            else:
                b_l[key_a] += g
            for kind_b, key_b, j_b in blocks:
                block = j_b.T @ wj_a
                if kind_a == "p" and kind_b == "p":
                    o_a = layout.pose_offsets[key_a]
                    o_b = layout.pose_offsets[key_b]
                    h_pp[o_b : o_b + j_b.shape[1], o_a : o_a + j_a.shape[1]] += block
                elif kind_a == "l" and kind_b == "l":
                    if key_a == key_b:
                        h_ll[key_a] += block
                elif kind_a == "l" and kind_b == "p":
                    h_pl.setdefault((key_b, key_a), np.zeros((j_b.shape[1], 3)))
                    h_pl[(key_b, key_a)] += block
    return h_pp, b_p, h_ll, b_l, h_pl, cost


def _solve(layout, problem, h_pp, b_p, h_ll, b_l, h_pl, lam):
    """Damped Schur-complement solve; returns (pose step, point steps)."""
    n_pts = len(layout.point_index)
    diag_ll = np.diagonal(h_ll, axis1=1, axis2=2)[:, None, :]
    damp_ll = h_ll + lam * (np.eye(3) * diag_ll) + 1e-12 * np.eye(3)
    inv_ll = np.zeros_like(h_ll)
    usable = np.ones(n_pts, dtype=bool)
    for i in range(n_pts):
        try:
            inv_ll[i] = np.linalg.inv(damp_ll[i])
        except np.linalg.LinAlgError:
            usable[i] = False

    by_point: dict[int, list[tuple[Key, np.ndarray]]] = {}
    for (pose_key, pt), block in h_pl.items():
        by_point.setdefault(pt, []).append((pose_key, block))

    dx_p = np.zeros(layout.pose_size)
    if layout.pose_size:
        s = h_pp + lam * np.diag(np.diag(h_pp))
        rhs = b_p.copy()
        for pt, blocks in by_point.items():
            if not usable[pt]:
                continue
            for key_a, blk_a in blocks:
                o_a = layout.pose_offsets[key_a]
                tmp = blk_a @ inv_ll[pt]
                rhs[o_a : o_a + blk_a.shape[0]] -= tmp @ b_l[pt]
                for key_b, blk_b in blocks:
                    o_b = layout.pose_offsets[key_b]
                    s[o_a : o_a + blk_a.shape[0], o_b : o_b + blk_b.shape[0]] -= tmp @ blk_b.T
        if np.any(np.diag(h_pp) <= 0.0):
            raise SolverDegenerateError("A free pose variable is unconstrained")
        try:
            lu = scipy.sparse.linalg.splu(scipy.sparse.csc_matrix(s))
            dx_p = lu.solve(rhs)
        except RuntimeError as e:
            raise SolverDegenerateError(f"Reduced system is singular: {e}") from None
        if not np.all(np.isfinite(dx_p)):
            raise SolverDegenerateError("Reduced system produced a non-finite step")

    dx_l = np.zeros((n_pts, 3))
    for pt in range(n_pts):
        if not usable[pt]:
            continue
        rhs = b_l[pt].copy()
        for pose_key, blk in by_point.get(pt, ()):
            o = layout.pose_offsets[pose_key]
            rhs -= blk.T @ dx_p[o : o + blk.shape[0]]
        dx_l[pt] = inv_ll[pt] @ rhs
    return dx_p, dx_l


def _apply(problem: Problem, layout: _Layout, dx_p: np.ndarray, dx_l: np.ndarray):
    """Apply a step; returns the previous values for rollback."""
    saved_poses = dict(problem.poses)
    saved_points = dict(problem.points)
    for key, o in layout.pose_offsets.items():
        dim = problem.pose_dims[key]
        problem.poses[key] = problem.poses[key].retract(dx_p[o : o + dim])
    for key, i in layout.point_index.items():
        problem.points[key] = problem.points[key] + dx_l[i]
    return saved_poses, saved_points


def levenberg_marquardt(
    problem: Problem,
    max_iters: int = 10,
    rel_tol: float = 1e-6,
    initial_lambda: float = 1e-4,
    tag: str = "LM",
) -> SolverResult:
    """Minimize the total robust cost in place. Accepted steps never increase the cost.

    Raises:
        SolverDegenerateError: free poses with no fixed pose or prior, or a singular system.
    """
    layout = _Layout(problem)
    if layout.pose_size and not problem.has_gauge_anchor():
        only_relative = all(isinstance(f, RelativePoseFactor) for f in problem.factors)
        raise SolverDegenerateError(
            "No fixed pose or prior anchors the gauge"
            + (" of a relative-pose graph" if only_relative else "")
        )

    cost = evaluate_cost(problem)
    result = SolverResult(initial_cost=cost, final_cost=cost, costs=[cost])
    if cost <= 1e-18 or (not layout.pose_size and not layout.point_index):
        result.converged = True
        return result

    lam = initial_lambda
    for _ in range(max_iters):
        result.iterations += 1
        h_pp, b_p, h_ll, b_l, h_pl, cost = _build_system(problem, layout)
        dx_p, dx_l = _solve(layout, problem, h_pp, b_p, h_ll, b_l, h_pl, lam)
        saved_poses, saved_points = _apply(problem, layout, dx_p, dx_l)
        new_cost = evaluate_cost(problem)
        if new_cost < cost:
            result.accepted += 1
            result.costs.append(new_cost)
            lam = max(lam / 10.0, 1e-12)
            decrease = (cost - new_cost) / max(cost, 1e-300)
            cost = new_cost
            if decrease < rel_tol:
                result.converged = True
                break
        else:
            problem.poses, problem.points = saved_poses, saved_points
            lam = min(lam * 10.0, 1e12)
            if lam >= 1e12:
                break
    result.final_cost = cost
    logger.debug(
        f"[{tag}] {result.iterations} iterations, {result.accepted} accepted, "
        f"cost {result.initial_cost:.4g} -> {result.final_cost:.4g}"
    )
    return result

