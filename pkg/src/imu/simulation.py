"""Forward IMU measurement model.

gyro  = omega_b + b_g + n_g
accel = R_wb^T (a_w - g_w) + b_a + n_a

White noise densities are discretized as sigma * sqrt(rate); biases follow
a discretized Wiener process with step sigma_walk * sqrt(1 / rate).
"""

import logging
import math

import numpy as np

from imu.trajectory import Trajectory
from imu.types import ImuBias, ImuNoiseModel, ImuSample

logger = logging.getLogger(__name__)


def simulate_measurements(
    true_trajectory: Trajectory,
    noise: ImuNoiseModel,
    bias0: ImuBias,
    rate: float,
    seed: int,
    t_start: float = 0.0,
    t_end: float | None = None,
) -> list[ImuSample]:
    """Sample the trajectory at `rate` Hz over [t_start, t_end].

    Deterministic given seed. t_end defaults to the trajectory duration.
    """
    if rate <= 0:
        raise ValueError("rate must be > 0")
    if t_end is None:
        t_end = t_start + true_trajectory.duration
    if not math.isfinite(t_end):
        raise ValueError("t_end is required for unbounded trajectories")

    dt = 1.0 / rate
    count = int(math.floor((t_end - t_start) * rate + 1e-9)) + 1
    rng = np.random.default_rng(seed)
    draws = rng.standard_normal((count, 12))

    gyro_sd = noise.gyro_noise_density * math.sqrt(rate)
    accel_sd = noise.accel_noise_density * math.sqrt(rate)
    gyro_walk_sd = noise.gyro_bias_walk * math.sqrt(dt)
    accel_walk_sd = noise.accel_bias_walk * math.sqrt(dt)
    gravity = noise.gravity

    bg = bias0.gyro.copy()
    ba = bias0.accel.copy()
    samples = []
    for k in range(count):
        t = t_start + k * dt
        rotation = true_trajectory.rotation(t)
        omega = true_trajectory.angular_velocity(t)
        accel_w = true_trajectory.acceleration(t)
        gyro = omega + bg + gyro_sd * draws[k, 0:3]
        accel = rotation.T @ (accel_w - gravity) + ba + accel_sd * draws[k, 3:6]
        samples.append(ImuSample(t, gyro, accel))
        bg = bg + gyro_walk_sd * draws[k, 6:9]
        ba = ba + accel_walk_sd * draws[k, 9:12]

    logger.debug(f"[Imu] Simulated {count} samples over [{t_start:.3f}, {t_end:.3f}] s")
    return samples
