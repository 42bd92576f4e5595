from dataclasses import replace

import numpy as np
import pytest
from conftest import FakeLink

from codec.frame_codec import encode_frame
from codec.geometry import PyramidGeometry
from config import FrameMode, PipelineMode
from edge import (
    EdgeError,
    EdgeServer,
    InitPhase,
    Keyframe,
    LocalMap,
    SessionSetupError,
    VioSession,
    global_point_id,
)
from edge.errors import ExcitationTooLowError, InertialInitError, InsufficientParallaxError
from edge.initialization import inertial_init, rotation_parallax_deg, triangulate_pairs, visual_init
from edge.local_ba import local_ba
from edge.matching import match_by_words, match_descriptors
from geometry.camera import project_points
from geometry.pose import Pose
from geometry.so3 import so3_exp
from harness.codec_io import synthetic_frame
from harness.scenario import flip_bits
from imu.preintegration import ImuBuffer
from imu.simulation import simulate_measurements
from imu.trajectory import CircleTrajectory
from imu.types import ImuBias, ImuNoiseModel, NavState
from tracking.errors import InsufficientCorrespondencesError
from wire.message import Message, MessageType
from wire.payloads import SessionSetup


def frustum_points(count: int, seed: int = 0, near: float = 4.0, far: float = 8.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    z = rng.uniform(near, far, count)
    return np.column_stack([z * rng.uniform(-0.5, 0.5, count), z * rng.uniform(-0.3, 0.3, count), z])


def pixels_of(T_wc: Pose, points: np.ndarray, intr) -> np.ndarray:
    uv, valid = project_points(intr, T_wc.inverse().act(points))
    assert valid.all()
    return uv


def make_keyframe(kf_id: int, state: NavState, pixels: np.ndarray, prev: int | None = None) -> Keyframe:
    n = len(pixels)
    rng = np.random.default_rng(kf_id)
    return Keyframe(
        kf_id,
        0.1 * kf_id,
        state,
        np.asarray(pixels, dtype=float),
        np.zeros(n, dtype=int),
        rng.integers(0, 256, size=(n, 32), dtype=np.uint8),
        np.arange(n),
        np.full(n, -1, dtype=np.int64),
        prev_kf_id=prev,
    )


def test_global_point_id_keeps_robots_apart():
    assert global_point_id(0, 5) == 5
    assert global_point_id(1, 5) == (1 << 32) + 5
    assert global_point_id(1, 5) != global_point_id(2, 5)


class TestLocalMap:
    def build(self, kf_count=3, n=6) -> LocalMap:
        local_map = LocalMap()
        for k in range(kf_count):
            state = NavState(np.eye(3), [0.1 * k, 0.0, 0.0])
            local_map.add_keyframe(make_keyframe(k, state, np.full((n, 2), 10.0), prev=k - 1 if k else None))
        for i in range(n):
            point = local_map.new_point([0.0, 0.0, 5.0 + i], np.zeros(32, dtype=np.uint8))
            for k in range(kf_count):
                local_map.add_observation(point.point_id, k, i)
        return local_map

    def test_observations_stay_consistent(self):
        local_map = self.build()
        local_map.check_consistency()
        assert local_map.covisibility(0) == {1: 6, 2: 6}
        local_map.remove_observation(2, 1)
        assert local_map.keyframes[1].point_ids[2] == -1
        local_map.check_consistency()

    def test_reassigning_a_keypoint_moves_the_observation(self):
        local_map = self.build()
        local_map.add_observation(0, 2, 1)
        assert 2 not in local_map.points[1].observations
        assert local_map.keyframes[2].point_ids[0] == -1
        local_map.check_consistency()

    def test_duplicate_keyframe_rejected(self):
        local_map = self.build()
        with pytest.raises(ValueError):
            local_map.add_keyframe(make_keyframe(1, NavState(np.eye(3), [0, 0, 0]), np.zeros((2, 2))))

    def test_trim_drops_oldest_and_weak_points(self):
        local_map = self.build(kf_count=3)
        local_map.remove_observation(4, 2)
        removed = local_map.trim(2)
        assert removed == [0]
        assert 4 not in local_map.points
        assert local_map.keyframes[1].pre is None
        local_map.check_consistency()

    def test_similarity_maps_points_and_poses(self):
        local_map = self.build()
        rotation = so3_exp(np.array([0.0, 0.0, np.pi / 2]))
        local_map.apply_similarity(2.0, rotation, np.array([1.0, 0.0, 0.0]))
        assert np.allclose(local_map.keyframes[1].state.position, [1.0, 0.2, 0.0])
        assert np.allclose(local_map.points[0].position, [1.0, 0.0, 10.0])
        assert np.allclose(local_map.keyframes[1].state.rotation, rotation)


def test_match_descriptors_is_mutual():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 256, size=(50, 32), dtype=np.uint8)
    order = rng.permutation(50)
    b = flip_bits(a[order], 0.03, rng)
    pairs = match_descriptors(a, b)
    assert len(pairs) >= 45
    assert all(order[j] == i for i, j in pairs)
    assert match_descriptors(a, b[:0]).shape == (0, 2)


def test_match_by_words_uses_buckets_then_falls_back():
    rng = np.random.default_rng(1)
    a = rng.integers(0, 256, size=(40, 32), dtype=np.uint8)
    b = flip_bits(a, 0.02, rng)
    words = np.arange(40)
    pairs = match_by_words(words, a, words, b, min_matches=20)
    assert sorted(map(tuple, pairs.tolist())) == [(i, i) for i in range(40)]
    fallback = match_by_words(words, a, words[::-1].copy(), b, min_matches=20)
    assert len(fallback) >= 35


def test_triangulate_pairs_recovers_points(intrinsics):
    points = frustum_points(30)
    pose_b = Pose(so3_exp(np.array([0.0, 0.02, 0.0])), [0.5, 0.0, 0.0])
    px_a = pixels_of(Pose.identity(), points, intrinsics)
    px_b = pixels_of(pose_b, points, intrinsics)
    tri, ok = triangulate_pairs(Pose.identity(), pose_b, px_a, px_b, intrinsics)
    assert ok.all()
    assert np.allclose(tri, points, atol=1e-6)

    # parallel rays
    tri, ok = triangulate_pairs(Pose.identity(), Pose.identity(), px_a, px_a, intrinsics)
    assert not ok.any()


def test_visual_init_normalizes_baseline(config, intrinsics):
    # sideways step in front of a near scene, so depth spread survives rotation compensation
    points = frustum_points(150, seed=3, near=1.5, far=4.0)
    pose_b = Pose(so3_exp(np.array([0.01, -0.03, 0.0])), [0.5, 0.0, 0.05])
    px_a = pixels_of(Pose.identity(), points, intrinsics)
    px_b = pixels_of(pose_b, points, intrinsics)
    init = visual_init(px_a, px_b, intrinsics, config.vio)
    assert init.parallax_deg > 1.2
    scale = np.linalg.norm(pose_b.translation)
    assert np.allclose(init.pose_b.translation, pose_b.translation / scale, atol=1e-3)
    assert np.allclose(init.pose_b.rotation, pose_b.rotation, atol=1e-3)
    assert len(init.indices) >= config.vio.init_min_correspondences
    assert np.allclose(init.points, points[init.indices] / scale, atol=1e-2)


def test_visual_init_rejects_pure_rotation_and_few_pairs(config, intrinsics):
    points = frustum_points(150, seed=4)
    px_a = pixels_of(Pose.identity(), points, intrinsics)
    px_b = pixels_of(Pose(so3_exp(np.array([0.0, 0.05, 0.0])), [0.0, 0.0, 0.0]), points, intrinsics)
    with pytest.raises(InsufficientParallaxError):
        visual_init(px_a, px_b, intrinsics, config.vio)
    with pytest.raises(InsufficientCorrespondencesError):
        visual_init(px_a[:10], px_b[:10], intrinsics, config.vio)


def two_plane_points(count: int, near: float, far: float, seed: int = 5) -> np.ndarray:
    """Narrow-field points split evenly between two depths."""
    rng = np.random.default_rng(seed)
    z = np.where(np.arange(count) % 2 == 0, near, far)
    return np.column_stack([z * rng.uniform(-0.1, 0.1, count), z * rng.uniform(-0.1, 0.1, count), z])


def test_visual_init_gate_rejects_parallax_just_below_one_degree(config, intrinsics):
    # a sideways step b gives each plane a flow of about b / z; the best pure
    # rotation sits midway, leaving b * (1/near - 1/far) / 2 on every point
    near, far = 2.0, 4.0
    residual = np.radians(0.9)
    baseline = 2.0 * residual / (1.0 / near - 1.0 / far)
    points = two_plane_points(150, near, far)
    px_a = pixels_of(Pose.identity(), points, intrinsics)
    px_b = pixels_of(Pose(np.eye(3), [baseline, 0.0, 0.0]), points, intrinsics)

    measured = rotation_parallax_deg(intrinsics.bearings(px_a), intrinsics.bearings(px_b))
    assert 0.8 < measured < config.vio.init_min_parallax_deg
    with pytest.raises(InsufficientParallaxError):
        visual_init(px_a, px_b, intrinsics, config.vio)

    px_wide = pixels_of(Pose(np.eye(3), [2.0 * baseline, 0.0, 0.0]), points, intrinsics)
    wide = rotation_parallax_deg(intrinsics.bearings(px_a), intrinsics.bearings(px_wide))
    assert wide > config.vio.init_min_parallax_deg


def inertial_problem(config, scale_true=2.0, span=3.0, step=0.5):
    trajectory = CircleTrajectory(radius=2.0, period=10.0, wobble_amplitude=0.05, bob_amplitude=0.1)
    samples = simulate_measurements(trajectory, ImuNoiseModel(), ImuBias.zero(), rate=200.0, seed=0, t_end=span)
    buffer = ImuBuffer()
    buffer.extend(samples)
    times = np.arange(0.0, span + 1e-9, step)
    origin = trajectory.position(0.0)
    poses = [
        (float(t), Pose(trajectory.pose(t).rotation, (trajectory.position(t) - origin) / scale_true))
        for t in times
    ]
    pres = [buffer.preintegrate(float(a), float(b), ImuBias.zero()) for a, b in zip(times[:-1], times[1:])]
    accel = np.array([s.accel for s in samples])
    return poses, pres, accel, trajectory


def test_inertial_init_recovers_scale_and_gravity(config):
    poses, pres, accel, trajectory = inertial_problem(config)
    noise = ImuNoiseModel.from_config(config.imu)
    result = inertial_init(poses, pres, accel, noise, config.vio)
    assert result.scale == pytest.approx(2.0, rel=0.02)
    angle = np.degrees(np.arccos(np.clip(result.gravity_dir @ [0.0, 0.0, -1.0], -1.0, 1.0)))
    assert angle < 1.0
    assert np.allclose(result.rotation @ result.gravity_dir, [0.0, 0.0, -1.0], atol=1e-9)
    assert np.linalg.norm(result.velocities[2] - trajectory.velocity(1.0)) < 0.05


def test_inertial_init_preconditions(config):
    poses, pres, accel, _ = inertial_problem(config)
    noise = ImuNoiseModel.from_config(config.imu)
    with pytest.raises(InertialInitError):
        inertial_init(poses[:2], pres[:1], accel, noise, config.vio)
    with pytest.raises(InertialInitError):
        inertial_init(poses, pres[:-1], accel, noise, config.vio)
    with pytest.raises(ExcitationTooLowError):
        inertial_init(poses, pres, np.tile([0.0, 0.0, 9.81], (100, 1)), noise, config.vio)
    short, short_pres, short_accel, _ = inertial_problem(config, span=1.5, step=0.25)
    with pytest.raises(InertialInitError, match="span"):
        inertial_init(short, short_pres, short_accel, noise, config.vio)


def bundle_map(intrinsics, perturb: bool) -> tuple[LocalMap, list[NavState], np.ndarray]:
    points = frustum_points(40, seed=5)
    states = [NavState(so3_exp(np.array([0.0, 0.02 * k, 0.0])), [0.3 * k, 0.0, 0.0]) for k in range(4)]
    local_map = LocalMap()
    rng = np.random.default_rng(6)
    for k, state in enumerate(states):
        initial = state
        if perturb and k == 3:
            initial = state.retract(np.array([0.005, -0.004, 0.002, 0.03, -0.02, 0.01]))
        local_map.add_keyframe(
            make_keyframe(k, initial, pixels_of(state.pose, points, intrinsics), prev=k - 1 if k else None)
        )
    for i, position in enumerate(points):
        start = position + (rng.normal(0, 0.02, 3) if perturb else 0.0)
        point = local_map.new_point(start, np.zeros(32, dtype=np.uint8))
        for k in range(len(states)):
            local_map.add_observation(point.point_id, k, i)
    return local_map, states, points


def test_local_ba_refines_newest_keyframe(config, intrinsics):
    local_map, states, points = bundle_map(intrinsics, perturb=True)
    noise = ImuNoiseModel.from_config(config.imu)
    result = local_ba(local_map, intrinsics, config.vio, noise, np.array(config.imu.gravity), inertial=False)
    assert result.fixed == [0, 1]
    assert result.window == [0, 1, 2, 3]
    assert result.solver.final_cost < result.solver.initial_cost
    assert np.linalg.norm(local_map.keyframes[3].state.position - states[3].position) < 1e-3
    assert np.linalg.norm(local_map.points[7].position - points[7]) < 1e-3
    local_map.check_consistency()


def test_local_ba_drops_outlier_observations(config, intrinsics):
    local_map, _, _ = bundle_map(intrinsics, perturb=False)
    local_map.keyframes[3].keypoints[5] += np.array([40.0, -30.0])
    noise = ImuNoiseModel.from_config(config.imu)
    result = local_ba(local_map, intrinsics, config.vio, noise, np.array(config.imu.gravity), inertial=False)
    assert result.outliers_removed >= 1
    assert local_map.keyframes[3].point_ids[5] == -1
    local_map.check_consistency()


def encoded_keyframe(config, vocab, frame_id=0, timestamp=0.0):
    frame = replace(synthetic_frame(config, vocab, 40, seed=frame_id), frame_id=frame_id, timestamp=timestamp)
    return encode_frame(frame, FrameMode.KEYFRAME, vocab, PyramidGeometry.from_config(config.codec), config.codec)


def setup_message(config, vocab, robot_id=0, fingerprint=None) -> Message:
    setup = SessionSetup(
        fingerprint if fingerprint is not None else config.codec.fingerprint(vocab.fingerprint),
        config.codec.p0_kf,
        vocab.fingerprint,
    )
    return Message(MessageType.SESSION_SETUP, robot_id, 1, setup.to_bytes())


class TestVioSession:
    def test_frames_need_setup(self, config, vocab):
        session = VioSession(0, config, vocab)
        with pytest.raises(SessionSetupError):
            session.on_frame(encoded_keyframe(config, vocab).payload)
        with pytest.raises(EdgeError):
            session.send_inertial_params()

    def test_decode_only_counts_frames(self, config, vocab):
        session = VioSession(0, config, vocab, decode_only=True)
        session.handle(setup_message(config, vocab))
        for k in range(3):
            session.on_frame(encoded_keyframe(config, vocab, k, 0.05 * k).payload)
        assert session.counters.frames == 3
        assert session.counters.keyframes == 3
        assert session.counters.decoded_features == 120
        assert session.phase == InitPhase.UNINITIALIZED

    def test_frames_wait_for_imu(self, config, vocab):
        session = VioSession(0, config, vocab)
        session.handle(setup_message(config, vocab))
        session.on_frame(encoded_keyframe(config, vocab, 0, 0.5).payload)
        assert session.counters.frames == 0
        session.flush()
        assert session.counters.frames == 1


class TestEdgeServer:
    def test_messages_before_setup_are_replayed(self, config, vocab):
        server = EdgeServer(config, vocab)
        cloud = FakeLink()
        server.attach_cloud(cloud)
        enc = encoded_keyframe(config, vocab)
        server.on_robot_message(Message(MessageType.KEYFRAME, 3, 1, enc.payload))
        assert not server.sessions[3].established
        server.on_robot_message(setup_message(config, vocab, robot_id=3))
        session = server.sessions[3]
        assert session.established
        session.flush()
        assert session.counters.frames == 1
        server.poll()
        assert [m.robot_id for m in cloud.of_type(MessageType.SESSION_SETUP)] == [3]

    def test_mismatched_robot_is_rejected(self, config, vocab):
        server = EdgeServer(config, vocab)
        server.on_robot_message(setup_message(config, vocab, robot_id=1, fingerprint=0x1234))
        assert 1 in server.rejected
        server.on_robot_message(Message(MessageType.KEYFRAME, 1, 1, encoded_keyframe(config, vocab).payload))
        assert not server.sessions[1].established

    def test_outbox_waits_for_link_capacity(self, config, vocab):
        server = EdgeServer(config, vocab)
        cloud = FakeLink(capacity=1)
        server.attach_cloud(cloud)
        for robot_id in range(3):
            server.on_robot_message(setup_message(config, vocab, robot_id=robot_id))
        server.poll()
        assert len(cloud.sent) == 1
        assert server.pending_outbound == 2
        cloud.capacity = None
        server.finish()
        assert server.pending_outbound == 0
        assert sorted(server.summary()) == [0, 1, 2]


def bare_keyframe(kf_id: int) -> Keyframe:
    return make_keyframe(kf_id, NavState.from_pose(Pose.identity()), np.zeros((0, 2)))


class TestAsyncMapping:
    @pytest.mark.asyncio
    async def test_keyframes_are_mapped_off_the_tracking_path(self, config, vocab, monkeypatch):
        server = EdgeServer(config, vocab)
        mapped = []
        async with server.async_mapping() as mappers:
            server.on_robot_message(setup_message(config, vocab, robot_id=2))
            session = server.sessions[2]
            monkeypatch.setattr(session, "map_keyframe", lambda kf: mapped.append(kf.kf_id))
            assert set(mappers) == {2} and mappers[2].running
            for k in range(3):
                session.mapper(bare_keyframe(k))
            assert mapped == []
            await server.poll_async()
            assert mapped[:1] == [0]
        assert mapped == [0, 1, 2]
        assert session.mapper is None

    @pytest.mark.asyncio
    async def test_full_queue_maps_the_oldest_inline(self, config_factory, vocab, monkeypatch):
        config = config_factory()
        config.vio.mapping_queue = 1
        server = EdgeServer(config, vocab)
        server.on_robot_message(setup_message(config, vocab))
        session = server.sessions[0]
        mapped = []
        monkeypatch.setattr(session, "map_keyframe", lambda kf: mapped.append(kf.kf_id))
        async with server.async_mapping() as mappers:
            session.mapper(bare_keyframe(0))
            session.mapper(bare_keyframe(1))
            assert mapped == [0]
            assert mappers[0].inline == 1
        assert mapped == [0, 1]

    @pytest.mark.asyncio
    async def test_failed_keyframe_does_not_stop_the_task(self, config, vocab, monkeypatch):
        server = EdgeServer(config, vocab)
        server.on_robot_message(setup_message(config, vocab))
        session = server.sessions[0]
        mapped = []

        def map_keyframe(kf):
            if kf.kf_id == 0:
                raise EdgeError("no parallax")
            mapped.append(kf.kf_id)

        monkeypatch.setattr(session, "map_keyframe", map_keyframe)
        async with server.async_mapping() as mappers:
            session.mapper(bare_keyframe(0))
            session.mapper(bare_keyframe(1))
        assert mapped == [1]
        assert mappers[0].mapped == 2

    @pytest.mark.asyncio
    async def test_decode_only_sessions_get_no_mapper(self, config, vocab):
        server = EdgeServer(config, vocab, PipelineMode.STREAM)
        async with server.async_mapping() as mappers:
            server.on_robot_message(setup_message(config, vocab))
            assert mappers == {}
            assert server.sessions[0].mapper is None
