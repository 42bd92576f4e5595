"""IMU preintegration on the manifold with first-order bias correction.

Each sample is held constant over its interval. Within an interval the
rotation is integrated exactly, and velocity/position use the closed-form
integrals of Exp(t*phi) so that constant body-frame inputs are integrated
without discretization error.
"""

import bisect
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from geometry.so3 import (
    normalize_rotation,
    right_jacobian,
    right_jacobian_inv,
    skew,
    so3_exp,
    so3_log,
)
from imu.errors import ImuBatchError
from imu.types import ImuBias, ImuNoiseModel, ImuSample, NavState


@dataclass(frozen=True, eq=False)
class Preintegrated:
    delta_R: np.ndarray
    delta_v: np.ndarray
    delta_p: np.ndarray
    dt_total: float
    bias_lin: ImuBias
    jac_dR_dbg: np.ndarray
    jac_dv_dbg: np.ndarray
    jac_dv_dba: np.ndarray
    jac_dp_dbg: np.ndarray
    jac_dp_dba: np.ndarray
    n_samples: int = 0


def _integral_terms(phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Integrals of Exp(t*phi) over [0, 1] and of (1 - t) Exp(t*phi) over [0, 1]."""
    theta = math.sqrt(float(phi @ phi))
    w = skew(phi)
    w2 = w @ w
    if theta < 1e-4:
        return (
            np.eye(3) + 0.5 * w + w2 / 6.0,
            0.5 * np.eye(3) + w / 6.0 + w2 / 24.0,
        )
    s, c = math.sin(theta), math.cos(theta)
    t2 = theta * theta
    gamma1 = np.eye(3) + ((1.0 - c) / t2) * w + ((theta - s) / (t2 * theta)) * w2
    gamma2 = 0.5 * np.eye(3) + ((theta - s) / (t2 * theta)) * w + ((0.5 * t2 + c - 1.0) / (t2 * t2)) * w2
    return gamma1, gamma2


def _intervals(samples: Sequence[ImuSample], t_end: float | None) -> np.ndarray:
    if not samples:
        raise ImuBatchError("Cannot preintegrate an empty batch")
    times = np.array([s.timestamp for s in samples])
    steps = np.diff(times)
    bad = np.flatnonzero(steps <= 0)
    if len(bad):
        raise ImuBatchError(f"Non-monotone IMU timestamp at index {int(bad[0]) + 1}")
    if t_end is not None:
        last = t_end - times[-1]
        if last < 0:
            raise ImuBatchError(f"t_end {t_end:.6f} precedes the last sample {times[-1]:.6f}")
    elif len(steps):
        last = steps[-1]
    else:
        # a lone reading with no end time spans nothing
        last = 0.0
    return np.append(steps, last)


def preintegrate(
    samples: Sequence[ImuSample], bias: ImuBias, t_end: float | None = None
) -> Preintegrated:
    """Accumulate rotation/velocity/position deltas and their bias Jacobians.

    Args:
        samples: strictly increasing readings; sample k holds until sample k+1.
        bias: linearization point.
        t_end: end of the last interval. Defaults to repeating the previous spacing,
            or to a zero-length interval for a single sample.

    Raises:
        ImuBatchError: empty batch, non-monotone timestamps, or t_end before the last sample.
    """
    dts = _intervals(samples, t_end)

    d_r = np.eye(3)
    d_v = np.zeros(3)
    d_p = np.zeros(3)
    j_r = np.zeros((3, 3))
    j_vg = np.zeros((3, 3))
    j_va = np.zeros((3, 3))
    j_pg = np.zeros((3, 3))
    j_pa = np.zeros((3, 3))

    for sample, dt in zip(samples, dts):
        omega = sample.gyro - bias.gyro
        acc = sample.accel - bias.accel
        phi = omega * dt
        step = so3_exp(phi)
        jr = right_jacobian(phi)
        gamma1, gamma2 = _integral_terms(phi)
        c_v = gamma1 @ acc
        c_p = gamma2 @ acc
        dt2 = dt * dt

        # Jacobians first: they use the rotation and Jacobians before this step
        j_pa = j_pa + j_va * dt - d_r @ gamma2 * dt2
        j_pg = j_pg + j_vg * dt + (-d_r @ skew(c_p) @ j_r + d_r @ skew(acc) * (dt / 6.0)) * dt2
        j_va = j_va - d_r @ gamma1 * dt
        j_vg = j_vg - d_r @ skew(c_v) @ j_r * dt + 0.5 * d_r @ skew(acc) * dt2
        j_r = step.T @ j_r - jr * dt

        d_p = d_p + d_v * dt + d_r @ c_p * dt2
        d_v = d_v + d_r @ c_v * dt
        d_r = d_r @ step

    return Preintegrated(
        delta_R=normalize_rotation(d_r),
        delta_v=d_v,
        delta_p=d_p,
        dt_total=float(dts.sum()),
        bias_lin=bias,
        jac_dR_dbg=j_r,
        jac_dv_dbg=j_vg,
        jac_dv_dba=j_va,
        jac_dp_dbg=j_pg,
        jac_dp_dba=j_pa,
        n_samples=len(samples),
    )


def bias_corrected_deltas(
    pre: Preintegrated, new_bias: ImuBias
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """First-order update of the deltas to a nearby bias (valid for small changes)."""
    dbg = new_bias.gyro - pre.bias_lin.gyro
    dba = new_bias.accel - pre.bias_lin.accel
    d_r = pre.delta_R @ so3_exp(pre.jac_dR_dbg @ dbg)
    d_v = pre.delta_v + pre.jac_dv_dbg @ dbg + pre.jac_dv_dba @ dba
    d_p = pre.delta_p + pre.jac_dp_dbg @ dbg + pre.jac_dp_dba @ dba
    return d_r, d_v, d_p


def imu_residual(
    pre: Preintegrated,
    state_i: NavState,
    state_j: NavState,
    g_W: np.ndarray,
    dt: float | None = None,
) -> np.ndarray:
    """[e_R; e_v; e_p] between two states, deltas corrected to state_i's bias."""
    dt = pre.dt_total if dt is None else dt
    g = np.asarray(g_W, dtype=float)
    d_r, d_v, d_p = bias_corrected_deltas(pre, state_i.bias)
    r_it = state_i.rotation.T
    e_r = so3_log(d_r.T @ r_it @ state_j.rotation)
    e_v = r_it @ (state_j.velocity - state_i.velocity - g * dt) - d_v
    e_p = r_it @ (state_j.position - state_i.position - state_i.velocity * dt - 0.5 * g * dt * dt) - d_p
    return np.concatenate([e_r, e_v, e_p])


def imu_residual_jacobians(
    pre: Preintegrated,
    state_i: NavState,
    state_j: NavState,
    g_W: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Residual plus 9x15 Jacobians wrt both states.

    State tangent order is [dphi, dp, dv, dbg, dba] with R <- R Exp(dphi) and
    additive updates elsewhere (see NavState.retract).
    """
    dt = pre.dt_total
    g = np.asarray(g_W, dtype=float)
    dbg = state_i.bias.gyro - pre.bias_lin.gyro
    d_r, d_v, d_p = bias_corrected_deltas(pre, state_i.bias)
    r_i, r_j = state_i.rotation, state_j.rotation
    r_it = r_i.T

    e_r = so3_log(d_r.T @ r_it @ r_j)
    vel_term = r_it @ (state_j.velocity - state_i.velocity - g * dt)
    pos_term = r_it @ (state_j.position - state_i.position - state_i.velocity * dt - 0.5 * g * dt * dt)
    residual = np.concatenate([e_r, vel_term - d_v, pos_term - d_p])

    jr_inv = right_jacobian_inv(e_r)
    j_i = np.zeros((9, 15))
    j_j = np.zeros((9, 15))

    j_i[0:3, 0:3] = -jr_inv @ r_j.T @ r_i
    j_j[0:3, 0:3] = jr_inv
    j_i[0:3, 9:12] = (
        -jr_inv @ so3_exp(e_r).T @ right_jacobian(pre.jac_dR_dbg @ dbg) @ pre.jac_dR_dbg
    )

    j_i[3:6, 0:3] = skew(vel_term)
    j_i[3:6, 6:9] = -r_it
    j_j[3:6, 6:9] = r_it
    j_i[3:6, 9:12] = -pre.jac_dv_dbg
    j_i[3:6, 12:15] = -pre.jac_dv_dba

    j_i[6:9, 0:3] = skew(pos_term)
    j_i[6:9, 3:6] = -r_it
    j_j[6:9, 3:6] = r_it
    j_i[6:9, 6:9] = -r_it * dt
    j_i[6:9, 9:12] = -pre.jac_dp_dbg
    j_i[6:9, 12:15] = -pre.jac_dp_dba
    return residual, j_i, j_j


def predict_state(state_i: NavState, pre: Preintegrated, g_W: np.ndarray) -> NavState:
    """State at the end of the interval that zeroes the IMU residual."""
    g = np.asarray(g_W, dtype=float)
    dt = pre.dt_total
    d_r, d_v, d_p = bias_corrected_deltas(pre, state_i.bias)
    r_i = state_i.rotation
    return NavState(
        rotation=normalize_rotation(r_i @ d_r),
        position=state_i.position + state_i.velocity * dt + 0.5 * g * dt * dt + r_i @ d_p,
        velocity=state_i.velocity + g * dt + r_i @ d_v,
        bias=state_i.bias,
    )


def imu_information(
    pre: Preintegrated,
    noise: ImuNoiseModel,
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> np.ndarray:
    """Diagonal information for [e_R, e_v, e_p] from noise densities and the interval."""
    dt = max(pre.dt_total, 1e-6)
    var_r = max(noise.gyro_noise_density**2 * dt, 1e-12)
    var_v = max(noise.accel_noise_density**2 * dt, 1e-10)
    var_p = max(noise.accel_noise_density**2 * dt**3 / 3.0, 1e-12)
    w_r, w_v, w_p = weights
    return np.concatenate(
        [np.full(3, w_r / var_r), np.full(3, w_v / var_v), np.full(3, w_p / var_p)]
    )


def bias_walk_information(dt: float, noise: ImuNoiseModel, weight: float = 1.0) -> np.ndarray:
    dt = max(dt, 1e-6)
    var_g = max(noise.gyro_bias_walk**2 * dt, 1e-14)
    var_a = max(noise.accel_bias_walk**2 * dt, 1e-12)
    return weight * np.concatenate([np.full(3, 1.0 / var_g), np.full(3, 1.0 / var_a)])


class ImuBuffer:
    """Time-ordered store of raw samples with interval extraction."""

    def __init__(self):
        self._times: list[float] = []
        self._samples: list[ImuSample] = []

    def __len__(self) -> int:
        return len(self._samples)

    def extend(self, samples: Sequence[ImuSample]) -> None:
        for sample in samples:
            if self._times and sample.timestamp <= self._times[-1]:
                continue
            self._times.append(sample.timestamp)
            self._samples.append(sample)

    @property
    def last_timestamp(self) -> float:
        return self._times[-1] if self._times else -math.inf

    def between(self, t_i: float, t_j: float) -> list[ImuSample]:
        """Samples covering [t_i, t_j); the sample active at t_i is re-stamped to t_i."""
        if t_j <= t_i:
            raise ImuBatchError(f"Empty interval [{t_i:.6f}, {t_j:.6f})")
        start = max(bisect.bisect_right(self._times, t_i) - 1, 0)
        stop = bisect.bisect_left(self._times, t_j)
        batch = self._samples[start:stop]
        if not batch:
            raise ImuBatchError(f"No IMU samples cover [{t_i:.6f}, {t_j:.6f})")
        if batch[0].timestamp < t_i:
            first = batch[0]
            batch = [ImuSample(t_i, first.gyro, first.accel)] + batch[1:]
        return batch

    def preintegrate(self, t_i: float, t_j: float, bias: ImuBias) -> Preintegrated:
        return preintegrate(self.between(t_i, t_j), bias, t_end=t_j)

    def prune_before(self, t: float) -> None:
        keep = max(bisect.bisect_right(self._times, t) - 1, 0)
        if keep:
            del self._times[:keep]
            del self._samples[:keep]
