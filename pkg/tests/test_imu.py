import math

import numpy as np
import pytest

from geometry.pose import Pose
from geometry.so3 import normalize_rotation, skew, so3_exp, so3_log
from imu.errors import ImuBatchError, NoSamplesInWindowError
from imu.motion import mean_angular_velocity, predict_pose_umm
from imu.preintegration import (
    ImuBuffer,
    bias_corrected_deltas,
    imu_residual,
    imu_residual_jacobians,
    predict_state,
    preintegrate,
)
from imu.simulation import simulate_measurements
from imu.trajectory import CircleTrajectory, ConstantSpinTrajectory, StationaryTrajectory
from imu.types import ImuBias, ImuNoiseModel, ImuSample, NavState

GRAVITY = np.array([0.0, 0.0, -9.81])


def constant_samples(gyro, accel, rate=200.0, duration=1.0):
    count = int(round(duration * rate))
    return [ImuSample(k / rate, gyro, accel) for k in range(count)]


def test_stationary_preintegration_cancels_gravity():
    samples = constant_samples([0.0, 0.0, 0.0], -GRAVITY)
    pre = preintegrate(samples, ImuBias.zero(), t_end=1.0)
    state = NavState.from_pose(Pose.identity())
    predicted = predict_state(state, pre, GRAVITY)
    assert math.isclose(pre.dt_total, 1.0)
    assert np.allclose(predicted.position, 0.0, atol=1e-9)
    assert np.allclose(predicted.velocity, 0.0, atol=1e-9)


def test_constant_rate_rotation_is_exact():
    omega = np.array([0.0, 0.0, 0.8])
    pre = preintegrate(constant_samples(omega, [0.0, 0.0, 0.0]), ImuBias.zero(), t_end=1.0)
    assert np.allclose(pre.delta_R, so3_exp(omega), atol=1e-12)


def test_preintegration_rejects_bad_batches():
    with pytest.raises(ImuBatchError):
        preintegrate([], ImuBias.zero())
    reversed_batch = [ImuSample(0.1, [0, 0, 0], [0, 0, 0]), ImuSample(0.05, [0, 0, 0], [0, 0, 0])]
    with pytest.raises(ImuBatchError):
        preintegrate(reversed_batch, ImuBias.zero())
    with pytest.raises(ImuBatchError):
        preintegrate([ImuSample(0.2, [0, 0, 0], [0, 0, 0])], ImuBias.zero(), t_end=0.1)


def test_single_bias_cancelled_sample_is_identity():
    bias = ImuBias([0.01, -0.02, 0.03], [0.1, 0.2, -0.3])
    pre = preintegrate([ImuSample(0.0, bias.gyro, bias.accel)], bias)
    assert pre.n_samples == 1
    assert np.allclose(pre.delta_R, np.eye(3))
    assert np.allclose(pre.delta_v, 0.0)
    assert np.allclose(pre.delta_p, 0.0)

    timed = preintegrate([ImuSample(0.0, bias.gyro, bias.accel)], bias, t_end=0.005)
    assert timed.dt_total == pytest.approx(0.005)
    assert np.allclose(timed.delta_R, np.eye(3), atol=1e-15)
    assert np.allclose(timed.delta_v, 0.0, atol=1e-15)
    assert np.allclose(timed.delta_p, 0.0, atol=1e-15)


def rk4_deltas(samples, bias, t_end, substeps=16):
    """Dense RK4 integration of dR = R[w], dv = R a, dp = v with each reading held until the next."""
    rot, vel, pos = np.eye(3), np.zeros(3), np.zeros(3)
    times = [s.timestamp for s in samples] + [t_end]
    for sample, t0, t1 in zip(samples, times[:-1], times[1:]):
        w = skew(sample.gyro - bias.gyro)
        acc = sample.accel - bias.accel
        h = (t1 - t0) / substeps
        for _ in range(substeps):
            k1 = (rot @ w, rot @ acc, vel)
            r2, v2 = rot + 0.5 * h * k1[0], vel + 0.5 * h * k1[1]
            k2 = (r2 @ w, r2 @ acc, v2)
            r3, v3 = rot + 0.5 * h * k2[0], vel + 0.5 * h * k2[1]
            k3 = (r3 @ w, r3 @ acc, v3)
            r4, v4 = rot + h * k3[0], vel + h * k3[1]
            k4 = (r4 @ w, r4 @ acc, v4)
            rot = rot + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            vel = vel + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            pos = pos + h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    return normalize_rotation(rot), vel, pos


def test_preintegration_matches_rk4():
    trajectory = CircleTrajectory(radius=2.0, period=10.0, wobble_amplitude=0.05, bob_amplitude=0.1)
    bias = ImuBias([0.01, -0.02, 0.005], [0.05, 0.0, -0.03])
    samples = simulate_measurements(trajectory, ImuNoiseModel(), bias, rate=200.0, seed=0, t_end=0.5)[:-1]
    pre = preintegrate(samples, bias, t_end=0.5)
    rot, vel, pos = rk4_deltas(samples, bias, 0.5)
    assert np.linalg.norm(so3_log(rot.T @ pre.delta_R)) < 1e-5
    assert np.allclose(pre.delta_v, vel, atol=1e-5)
    assert np.allclose(pre.delta_p, pos, atol=1e-5)


@pytest.mark.parametrize("t0", [0.0, 1.0, 2.0])
def test_noiseless_prediction_matches_ground_truth(t0):
    trajectory = CircleTrajectory(radius=2.0, period=20.0, bob_amplitude=0.03)
    samples = simulate_measurements(trajectory, ImuNoiseModel(), ImuBias.zero(), rate=200.0, seed=0, t_end=3.0)
    buffer = ImuBuffer()
    buffer.extend(samples)
    pre = buffer.preintegrate(t0, t0 + 0.5, ImuBias.zero())
    start = NavState.from_pose(trajectory.pose(t0), trajectory.velocity(t0))
    end = predict_state(start, pre, GRAVITY)
    assert np.linalg.norm(end.position - trajectory.position(t0 + 0.5)) < 1e-4
    assert np.linalg.norm(end.velocity - trajectory.velocity(t0 + 0.5)) < 1e-3
    assert end.pose.rotation_error_deg(trajectory.pose(t0 + 0.5)) < 1e-6


def test_held_samples_converge_at_first_order():
    # readings held over their interval: halving the spacing halves the drift
    trajectory = CircleTrajectory(radius=2.0, period=10.0, wobble_amplitude=0.05, bob_amplitude=0.1)
    start = NavState.from_pose(trajectory.pose(0.0), trajectory.velocity(0.0))

    def drift(rate):
        buffer = ImuBuffer()
        buffer.extend(simulate_measurements(trajectory, ImuNoiseModel(), ImuBias.zero(), rate, seed=0, t_end=1.0))
        end = predict_state(start, buffer.preintegrate(0.0, 0.5, ImuBias.zero()), GRAVITY)
        return np.linalg.norm(end.position - trajectory.position(0.5))

    coarse, fine = drift(400.0), drift(800.0)
    assert coarse < 5e-3
    assert coarse / fine == pytest.approx(2.0, rel=0.15)


def random_state(rng, bias_scale=1.0):
    bias = ImuBias(rng.normal(size=3) * 0.01 * bias_scale, rng.normal(size=3) * 0.1 * bias_scale)
    return NavState(so3_exp(rng.normal(size=3)), rng.normal(size=3) * 2.0, rng.normal(size=3), bias)


def test_residual_jacobians_match_central_differences():
    rng = np.random.default_rng(7)
    eps = 1e-6
    for _ in range(100):
        samples = [
            ImuSample(0.005 * k, rng.normal(size=3) * 0.5, rng.normal(size=3) * 2.0 + [0.0, 0.0, 9.81])
            for k in range(20)
        ]
        pre = preintegrate(samples, random_state(rng).bias, t_end=0.1)
        state_i = random_state(rng)
        state_j = predict_state(state_i, pre, GRAVITY).retract(rng.normal(size=15) * 0.1)
        _, j_i, j_j = imu_residual_jacobians(pre, state_i, state_j, GRAVITY)

        numeric_i = np.zeros((9, 15))
        numeric_j = np.zeros((9, 15))
        for k in range(15):
            delta = np.zeros(15)
            delta[k] = eps
            numeric_i[:, k] = (
                imu_residual(pre, state_i.retract(delta), state_j, GRAVITY)
                - imu_residual(pre, state_i.retract(-delta), state_j, GRAVITY)
            ) / (2 * eps)
            numeric_j[:, k] = (
                imu_residual(pre, state_i, state_j.retract(delta), GRAVITY)
                - imu_residual(pre, state_i, state_j.retract(-delta), GRAVITY)
            ) / (2 * eps)
        for analytic, numeric in ((j_i, numeric_i), (j_j, numeric_j)):
            assert np.linalg.norm(numeric - analytic) <= 1e-4 * np.linalg.norm(analytic)
            for k in range(15):
                scale = max(np.linalg.norm(analytic[:, k]), 1e-3)
                assert np.linalg.norm(numeric[:, k] - analytic[:, k]) <= 1e-4 * scale


def test_residual_zero_at_prediction_and_linear_in_position():
    trajectory = CircleTrajectory(radius=1.5, period=8.0, wobble_amplitude=0.05)
    bias = ImuBias([0.01, -0.02, 0.005], [0.05, 0.0, -0.03])
    samples = simulate_measurements(trajectory, ImuNoiseModel(), bias, rate=200.0, seed=1, t_end=0.4)
    pre = preintegrate(samples[:-1], bias, t_end=0.4)
    state_i = NavState.from_pose(trajectory.pose(0.0), trajectory.velocity(0.0), bias)
    state_j = predict_state(state_i, pre, GRAVITY)
    assert np.allclose(imu_residual(pre, state_i, state_j, GRAVITY), 0.0, atol=1e-9)

    shifted = NavState(state_j.rotation, state_j.position + [0.1, 0.0, 0.0], state_j.velocity, state_j.bias)
    residual = imu_residual(pre, state_i, shifted, GRAVITY)
    assert np.allclose(residual[6:9], state_i.rotation.T @ [0.1, 0.0, 0.0], atol=1e-9)
    assert np.allclose(residual[:6], 0.0, atol=1e-9)


def test_bias_correction_approximates_reintegration():
    trajectory = CircleTrajectory(radius=2.0, period=10.0, wobble_amplitude=0.05)
    samples = simulate_measurements(trajectory, ImuNoiseModel(), ImuBias.zero(), rate=200.0, seed=2, t_end=0.5)
    pre = preintegrate(samples[:-1], ImuBias.zero(), t_end=0.5)
    nudged = ImuBias([1e-3, -1e-3, 5e-4], [1e-2, 0.0, -1e-2])
    d_r, d_v, d_p = bias_corrected_deltas(pre, nudged)
    exact = preintegrate(samples[:-1], nudged, t_end=0.5)
    assert np.allclose(d_r, exact.delta_R, atol=1e-6)
    assert np.allclose(d_v, exact.delta_v, atol=1e-5)
    assert np.allclose(d_p, exact.delta_p, atol=1e-5)


def test_bias_correction_error_is_second_order():
    trajectory = CircleTrajectory(radius=2.0, period=10.0, wobble_amplitude=0.05)
    samples = simulate_measurements(trajectory, ImuNoiseModel(), ImuBias.zero(), rate=200.0, seed=3, t_end=0.5)
    pre = preintegrate(samples[:-1], ImuBias.zero(), t_end=0.5)

    def errors(step):
        nudged = ImuBias(step * np.array([0.04, -0.03, 0.05]), [0.0, 0.0, 0.0])
        d_r, d_v, d_p = bias_corrected_deltas(pre, nudged)
        exact = preintegrate(samples[:-1], nudged, t_end=0.5)
        return np.array(
            [
                np.linalg.norm(so3_log(exact.delta_R.T @ d_r)),
                np.linalg.norm(d_v - exact.delta_v),
                np.linalg.norm(d_p - exact.delta_p),
            ]
        )

    assert errors(1.0) / errors(0.5) == pytest.approx([4.0, 4.0, 4.0], rel=0.1)


def test_simulation_is_deterministic_and_adds_noise():
    noise = ImuNoiseModel(1e-3, 1e-2, 1e-5, 1e-4)
    trajectory = StationaryTrajectory()
    a = simulate_measurements(trajectory, noise, ImuBias.zero(), 100.0, seed=5, t_end=1.0)
    b = simulate_measurements(trajectory, noise, ImuBias.zero(), 100.0, seed=5, t_end=1.0)
    assert len(a) == 101
    assert all(np.array_equal(x.gyro, y.gyro) for x, y in zip(a, b))
    assert np.std([s.gyro[0] for s in a]) > 0


def test_simulation_requires_finite_end():
    with pytest.raises(ValueError):
        simulate_measurements(StationaryTrajectory(), ImuNoiseModel(), ImuBias.zero(), 100.0, seed=0)


def test_buffer_between_restamps_first_sample():
    buffer = ImuBuffer()
    buffer.extend(constant_samples([0.0, 0.0, 1.0], [0.0, 0.0, 9.81], rate=10.0))
    batch = buffer.between(0.15, 0.45)
    assert batch[0].timestamp == pytest.approx(0.15)
    assert [s.timestamp for s in batch[1:]] == pytest.approx([0.2, 0.3, 0.4])
    with pytest.raises(ImuBatchError):
        buffer.between(0.5, 0.5)


def test_buffer_ignores_out_of_order_and_prunes():
    buffer = ImuBuffer()
    buffer.extend(constant_samples([0, 0, 0], [0, 0, 0], rate=10.0))
    buffer.extend([ImuSample(0.05, [0, 0, 0], [0, 0, 0])])
    assert len(buffer) == 10
    buffer.prune_before(0.55)
    assert buffer.between(0.55, 0.65)[0].timestamp == pytest.approx(0.55)
    assert len(buffer) == 5


def test_mean_angular_velocity_and_umm_prediction():
    samples = constant_samples([0.0, 0.5, 0.0], [0.0, 0.0, 0.0], rate=100.0)
    mean = mean_angular_velocity(samples, 0.1, 0.2)
    assert np.allclose(mean, [0.0, 0.5, 0.0])
    predicted = predict_pose_umm(Pose.identity(), mean, 0.1)
    assert np.allclose(predicted.rotation, so3_exp(np.array([0.0, 0.05, 0.0])))
    assert np.allclose(predicted.translation, 0.0)


def test_mean_angular_velocity_empty_window():
    samples = constant_samples([0.0, 0.5, 0.0], [0.0, 0.0, 0.0], rate=10.0)
    with pytest.raises(NoSamplesInWindowError):
        mean_angular_velocity(samples, 0.1, 0.2)
    with pytest.raises(ValueError):
        mean_angular_velocity(samples, 0.3, 0.2)


def test_spin_trajectory_gyro_reads_rate():
    trajectory = ConstantSpinTrajectory(omega=(0.0, 1.0, 0.0))
    samples = simulate_measurements(trajectory, ImuNoiseModel(), ImuBias.zero(), 50.0, seed=0, t_end=0.2)
    assert all(np.allclose(s.gyro, [0.0, 1.0, 0.0]) for s in samples)
