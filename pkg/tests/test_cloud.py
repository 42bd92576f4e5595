from dataclasses import replace

import numpy as np
import pytest
from conftest import FakeLink

from cloud import (
    BowDatabase,
    GlobalMap,
    InsufficientInliersError,
    LoopEdge,
    UnknownKeyframeError,
    bow_similarity,
    bow_vector,
)
from cloud.backbone import map_backbone_profile
from cloud.culling import cull_redundant_keyframes, protected_keyframes
from cloud.loop import compute_relative_pose, detect_loop
from cloud.merge import merge_maps
from cloud.optimize import global_optimize, optimize_pose_graph
from cloud.server import CloudServer
from config import CameraConfig
from edge import global_point_id
from geometry.camera import CameraIntrinsics, project_points
from geometry.pose import Pose
from geometry.so3 import so3_exp
from imu.types import NavState
from optim import SolverDegenerateError
from wire.message import Message, MessageType
from wire.payloads import KeyframeRecord, MapPointUpdate, PoseCorrection, SessionSetup

LANDMARKS = 150
CAMERA = CameraIntrinsics.from_config(CameraConfig())


@pytest.fixture(scope="module")
def world():
    """Landmarks in front of the cameras, each with its own descriptor and word."""
    rng = np.random.default_rng(21)
    points = np.column_stack([
        rng.uniform(-2.0, 2.0, LANDMARKS),
        rng.uniform(-1.2, 1.2, LANDMARKS),
        rng.uniform(5.0, 7.0, LANDMARKS),
    ])
    descriptors = rng.integers(0, 256, size=(LANDMARKS, 32), dtype=np.uint8)
    return points, descriptors


def robot0_pose(k: int) -> Pose:
    return Pose(so3_exp(np.array([0.0, 0.02 * k, 0.0])), [0.3 * k, 0.0, 0.0])


def robot1_pose(k: int) -> Pose:
    return Pose(so3_exp(np.array([0.0, -0.03 * k, 0.0])), [0.2 - 0.25 * k, 0.1, -0.2])


# robot 1's edge world frame expressed in robot 0's
ROBOT1_FRAME = Pose(so3_exp(np.array([0.1, 0.3, -0.2])), [2.0, -1.0, 0.5])


def record(
    world,
    robot_id: int,
    kf_id: int,
    T_wc: Pose,
    frame: Pose = Pose.identity(),
    timestamp: float | None = None,
    descriptors: np.ndarray | None = None,
) -> KeyframeRecord:
    """A keyframe seeing every landmark, expressed in the robot's own edge frame."""
    points, base = world
    uv, valid = project_points(CAMERA, T_wc.inverse().act(points))
    assert valid.all()
    assert (uv[:, 0] > 0).all() and (uv[:, 0] < 752).all()
    local = frame.inverse()
    ids = np.array([global_point_id(robot_id, i) for i in range(LANDMARKS)], dtype=np.int64)
    return KeyframeRecord(
        kf_id=kf_id,
        timestamp=float(kf_id) if timestamp is None else timestamp,
        state=NavState.from_pose(local @ T_wc),
        keypoints=uv,
        levels=np.zeros(LANDMARKS, dtype=int),
        descriptors=base if descriptors is None else descriptors,
        words=np.arange(LANDMARKS),
        point_ids=ids,
        points={int(g): local.act(p) for g, p in zip(ids, points)},
    )


def robot0_map(world, count: int = 4, pose=robot0_pose) -> GlobalMap:
    gmap = GlobalMap()
    for k in range(count):
        gmap.add_keyframe(0, record(world, 0, k, pose(k)))
    return gmap


class TestBow:
    def test_vector_is_l1_normalized(self):
        vec = bow_vector([3, 3, 5, 9])
        assert vec == {3: 0.5, 5: 0.25, 9: 0.25}
        assert bow_vector([]) == {}

    def test_similarity_bounds(self):
        a = bow_vector([1, 2, 3, 4])
        assert bow_similarity(a, a) == pytest.approx(1.0)
        assert bow_similarity(a, bow_vector([7, 8])) == 0.0
        assert bow_similarity(a, bow_vector([1, 2])) == pytest.approx(0.5)

    def test_database_ranks_and_forgets(self):
        db = BowDatabase()
        db.add("a", bow_vector([1, 2, 3, 4]))
        db.add("b", bow_vector([1, 2, 8, 9]))
        db.add("c", bow_vector([1, 2, 3, 4]))
        db.add("d", bow_vector([20, 21]))
        hits = db.query(bow_vector([1, 2, 3, 4]))
        assert [k for _, k in hits] == ["a", "c", "b"]
        assert [k for _, k in db.query(bow_vector([1, 2, 3, 4]), exclude={"a"}, limit=1)] == ["c"]
        db.remove("c")
        assert "c" not in db
        assert [k for _, k in db.query(bow_vector([1, 2, 3, 4]))] == ["a", "b"]
        assert len(db) == 3


class TestGlobalMap:
    def test_first_keyframe_anchors_the_robot(self, world):
        gmap = robot0_map(world)
        assert gmap.anchors == {0: (0, 0)}
        assert gmap.components() == {0: [0]}
        assert len(gmap.points) == LANDMARKS
        assert all(len(p.observations) == 4 for p in gmap.points.values())
        assert gmap[(0, 2)].prev_key == (0, 1)
        assert gmap.covisibility((0, 1)) == {(0, 0): LANDMARKS, (0, 2): LANDMARKS, (0, 3): LANDMARKS}
        gmap.check_consistency()

    def test_duplicate_keyframe_keeps_first(self, world):
        gmap = robot0_map(world, count=2)
        first = gmap[(0, 1)]
        again = gmap.add_keyframe(0, record(world, 0, 1, robot0_pose(3)))
        assert again is first
        assert len(gmap) == 2

    def test_point_update_skips_optimized_points(self, world):
        gmap = robot0_map(world, count=2)
        gid = global_point_id(0, 0)
        gmap.points[global_point_id(0, 1)].optimized = True
        update = MapPointUpdate({gid: np.array([1.0, 2.0, 3.0]), global_point_id(0, 1): np.zeros(3)})
        assert gmap.apply_point_update(0, update) == 1
        assert np.allclose(gmap.points[gid].position, [1.0, 2.0, 3.0])
        assert gmap.apply_point_update(9, update) == 0

    def test_remove_keyframe_bridges_the_chain(self, world):
        gmap = robot0_map(world)
        gmap.remove_keyframe((0, 2))
        assert gmap[(0, 3)].prev_key == (0, 1)
        assert (0, 2) not in gmap.database
        assert all(len(p.observations) == 3 for p in gmap.points.values())
        gmap.remove_keyframe((0, 3))
        assert gmap.last_key[0] == (0, 1)
        gmap.check_consistency()

    def test_fuse_points_keeps_every_observation(self, world):
        gmap = robot0_map(world, count=1)
        gmap.add_keyframe(1, record(world, 1, 0, robot1_pose(0)))
        keep, drop = global_point_id(0, 4), global_point_id(1, 4)
        gmap.fuse_points(keep, drop)
        assert drop not in gmap.points
        assert set(gmap.points[keep].observations) == {(0, 0), (1, 0)}
        assert gmap[(1, 0)].point_ids[4] == keep
        assert gmap.resolve(drop) == keep
        gmap.check_consistency()

    def test_transform_component_moves_alignments(self, world):
        gmap = robot0_map(world, count=2)
        T = Pose(so3_exp(np.array([0.0, 0.0, 0.4])), [1.0, 2.0, 0.0])
        before = gmap[(0, 1)].pose
        gmap.transform_component(0, T)
        assert gmap[(0, 1)].pose.allclose(T @ before, atol=1e-9)
        assert gmap.frame_alignment[0].allclose(T)
        assert gmap.edge_frame_pose(gmap[(0, 1)]).allclose(before, atol=1e-9)

    def test_unknown_keyframe(self):
        with pytest.raises(UnknownKeyframeError):
            GlobalMap()[(0, 0)]

    def test_dump_is_sorted_text(self, world, tmp_path):
        gmap = robot0_map(world, count=2)
        gmap.loops.append(LoopEdge((0, 1), (0, 0), Pose.identity(), 30))
        path = tmp_path / "map.txt"
        gmap.dump(path)
        lines = [line for line in path.read_text().splitlines() if not line.startswith("#")]
        kfs = [line for line in lines if line.startswith("KF ")]
        assert [line.split()[1:3] for line in kfs] == [["0", "0"], ["0", "1"]]
        assert sum(line.startswith("MP ") for line in lines) == LANDMARKS
        assert lines[-1] == "LOOP 0 1 0 0 30"


class TestLoops:
    def test_same_robot_neighbours_are_excluded(self, world, config):
        gmap = robot0_map(world)
        assert detect_loop((0, 3), gmap, config.cloud) is None

    def test_other_robot_is_a_candidate(self, world, config):
        gmap = robot0_map(world)
        gmap.add_keyframe(1, record(world, 1, 0, robot1_pose(0), ROBOT1_FRAME))
        candidate = detect_loop((1, 0), gmap, config.cloud)
        assert candidate is not None
        # equal scores resolve to the lower key
        assert candidate.key == (0, 0)
        assert candidate.score == pytest.approx(1.0)
        assert candidate.threshold == config.cloud.loop_min_score

    def test_relative_pose_across_frames(self, world, config, intrinsics):
        gmap = robot0_map(world)
        gmap.add_keyframe(1, record(world, 1, 0, robot1_pose(0), ROBOT1_FRAME))
        relative, inliers = compute_relative_pose((1, 0), (0, 2), gmap, intrinsics, config.cloud, config.tracking)
        truth = robot1_pose(0).inverse() @ robot0_pose(2)
        assert inliers >= 0.9 * LANDMARKS
        assert relative.allclose(truth, atol=1e-4)

    def test_unrelated_appearance_is_rejected(self, world, config, intrinsics):
        gmap = robot0_map(world, count=1)
        other = np.random.default_rng(5).integers(0, 256, size=(LANDMARKS, 32), dtype=np.uint8)
        gmap.add_keyframe(1, record(world, 1, 0, robot1_pose(0), ROBOT1_FRAME, descriptors=other))
        with pytest.raises(InsufficientInliersError):
            compute_relative_pose((1, 0), (0, 0), gmap, intrinsics, config.cloud, config.tracking)

    def test_merge_joins_components(self, world, config, intrinsics):
        gmap = robot0_map(world)
        gmap.add_keyframe(1, record(world, 1, 0, robot1_pose(0), ROBOT1_FRAME))
        relative, inliers = compute_relative_pose((1, 0), (0, 0), gmap, intrinsics, config.cloud, config.tracking)
        edge = LoopEdge((1, 0), (0, 0), relative, inliers)
        result = merge_maps(gmap, edge, intrinsics, config.cloud)
        assert result is not None
        assert (result.kept_root, result.moved_root) == (0, 1)
        assert gmap.components() == {0: [0, 1]}
        assert gmap.anchors == {0: (0, 0)}
        assert gmap[(1, 0)].pose.allclose(robot1_pose(0), atol=1e-4)
        assert result.fused >= 0.9 * LANDMARKS
        assert merge_maps(gmap, edge, intrinsics, config.cloud) is None
        gmap.check_consistency()


class TestOptimization:
    def test_global_optimize_restores_a_disturbed_keyframe(self, world, config, intrinsics):
        gmap = robot0_map(world)
        kf = gmap[(0, 2)]
        kf.state = NavState.from_pose(kf.pose @ Pose(so3_exp(np.array([0.01, -0.01, 0.0])), [0.03, 0.02, 0.0]))
        result = global_optimize(gmap, intrinsics, config)
        assert result.solver.final_cost < 1e-3 * result.solver.initial_cost
        assert 2 in result.corrections[0]
        assert gmap[(0, 2)].pose.translation_error(robot0_pose(2)) < 0.01
        assert gmap[(0, 0)].pose.allclose(robot0_pose(0), atol=1e-6)
        assert all(p.optimized for p in gmap.points.values())

    def test_pose_graph_pulls_toward_the_loop(self, world, config):
        gmap = robot0_map(world)
        kf = gmap[(0, 3)]
        kf.state = NavState.from_pose(Pose(np.eye(3), [0.25, 0.0, 0.0]) @ kf.pose)
        truth = robot0_pose(0).inverse() @ robot0_pose(3)
        gmap.loops.append(LoopEdge((0, 3), (0, 0), truth.inverse(), LANDMARKS))
        error_before = gmap[(0, 3)].pose.translation_error(robot0_pose(3))
        result = optimize_pose_graph(gmap, config)
        assert gmap[(0, 3)].pose.translation_error(robot0_pose(3)) < error_before
        assert 3 in result.corrections[0]

    def test_missing_anchor_is_degenerate(self, world, config, intrinsics):
        gmap = robot0_map(world, count=2)
        gmap.anchors.clear()
        with pytest.raises(SolverDegenerateError):
            global_optimize(gmap, intrinsics, config)
        with pytest.raises(SolverDegenerateError):
            optimize_pose_graph(gmap, config)


class TestCulling:
    def test_redundant_keyframes_go_protected_stay(self, world, config):
        gmap = robot0_map(world, count=5)
        assert protected_keyframes(gmap, 2) == {(0, 0), (0, 3), (0, 4)}
        assert cull_redundant_keyframes(gmap, config.cloud) == 2
        assert sorted(gmap.keyframes) == [(0, 0), (0, 3), (0, 4)]
        assert gmap[(0, 3)].prev_key == (0, 0)
        gmap.check_consistency()

    def test_loop_endpoints_are_protected(self, world, config):
        gmap = robot0_map(world, count=5)
        gmap.loops.append(LoopEdge((0, 1), (0, 0), Pose.identity(), 50))
        cull_redundant_keyframes(gmap, config.cloud)
        assert (0, 1) in gmap


def clustered_pose(k: int) -> Pose:
    x = 0.01 * k if k < 4 else 1.0 + 0.05 * (k - 4)
    return Pose(np.eye(3), [x, 0.0, 0.0])


class TestBackbone:
    def test_cluster_becomes_a_virtual_keyframe(self, world, config, intrinsics):
        gmap = robot0_map(world, count=6, pose=clustered_pose)
        result = map_backbone_profile(gmap, intrinsics, config.cloud)
        assert sorted(result.backbone) == [(0, 0), (0, 4), (0, 5)]
        assert result.virtual == [(0, -1)]
        assert sorted(result.removed) == [(0, 1), (0, 2), (0, 3)]
        virtual = gmap[(0, -1)]
        assert virtual.virtual and virtual.offsets is not None
        assert len(virtual.point_ids) == LANDMARKS
        assert gmap.stats()["virtual_keyframes"] == 1
        gmap.check_consistency()
        # the virtual observations reproject exactly through their offsets
        solve = global_optimize(gmap, intrinsics, config)
        assert solve.solver.final_cost < 1e-6

    def test_small_clusters_are_left_alone(self, world, config_factory, intrinsics):
        config = config_factory()
        config.cloud.mbp_min_cluster = 10
        gmap = robot0_map(world, count=6, pose=clustered_pose)
        result = map_backbone_profile(gmap, intrinsics, config.cloud)
        assert result.virtual == [] and len(gmap) == 6

    def test_dense_map_loses_a_third_of_its_keyframes(self, world, config, intrinsics):
        def dense_pose(k: int) -> Pose:
            x = 0.01 * k if k < 8 else 1.0 + 0.05 * (k - 8)
            return Pose(np.eye(3), [x, 0.0, 0.0])

        gmap = robot0_map(world, count=10, pose=dense_pose)
        before = len(gmap)
        result = map_backbone_profile(gmap, intrinsics, config.cloud)
        assert len(result.removed) == 7
        assert len(gmap) <= 0.7 * before
        assert all(len(point.observations) >= 2 for point in gmap.points.values())
        gmap.check_consistency()


def message(msg_type: MessageType, robot_id: int, payload: bytes, seq: int = 1) -> Message:
    return Message(msg_type, robot_id, seq, payload)


class TestCloudServer:
    def test_inter_robot_loop_merges_maps(self, world, config, vocab):
        cloud = CloudServer(config, vocab)
        for k in range(4):
            cloud.on_keyframe(0, record(world, 0, k, robot0_pose(k)))
        for k in range(3):
            cloud.on_keyframe(1, record(world, 1, k, robot1_pose(k), ROBOT1_FRAME))
        assert cloud.merged
        assert cloud.counters.merges == 1
        assert cloud.counters.loop_candidates == 1
        for k, (_, pose) in enumerate(cloud.trajectory(1)):
            assert pose.allclose(robot1_pose(k), atol=1e-3)
        summary = cloud.summary()
        assert summary["components"] == 1
        assert summary["loops_inter"] == 1
        cloud.map.check_consistency()

    def test_jobs_run_in_order(self, world, config, vocab):
        cloud = CloudServer(config, vocab)
        setup = SessionSetup(config.fingerprint(vocab.fingerprint), 0.9, vocab.fingerprint)
        cloud.submit(message(MessageType.SESSION_SETUP, 0, setup.to_bytes()))
        for k in range(2):
            payload = record(world, 0, k, robot0_pose(k)).to_bytes()
            cloud.submit(message(MessageType.KEYFRAME, 0, payload, seq=k + 2))
        cloud.submit(message(MessageType.KEYFRAME_ACK, 0, b""))
        assert cloud.pending_outbound == 3
        assert cloud.run_pending() == 3
        assert len(cloud.map) == 2

    def test_vocabulary_mismatch_rejects_robot(self, world, config, vocab):
        cloud = CloudServer(config, vocab)
        setup = SessionSetup(0, 0.9, vocab.fingerprint ^ 1)
        cloud.submit(message(MessageType.SESSION_SETUP, 3, setup.to_bytes()))
        cloud.submit(message(MessageType.KEYFRAME, 3, record(world, 3, 0, robot0_pose(0)).to_bytes()))
        cloud.run_pending()
        assert cloud.rejected == {3}
        assert len(cloud.map) == 0

    def test_corrections_reach_the_edge(self, world, config, vocab):
        cloud = CloudServer(config, vocab)
        link = FakeLink()
        cloud.attach(link)
        for k in range(3):
            cloud.on_keyframe(0, record(world, 0, k, robot0_pose(k)))
        kf = cloud.map[(0, 1)]
        kf.state = NavState.from_pose(kf.pose @ Pose(np.eye(3), [0.0, 0.02, 0.0]))
        assert cloud.optimize() is not None
        cloud.poll()
        sent = link.of_type(MessageType.POSE_CORRECTION)
        assert len(sent) == 1 and sent[0].robot_id == 0
        poses = PoseCorrection.from_bytes(sent[0].payload).poses
        assert poses[1].translation_error(robot0_pose(1)) < 0.01

    def test_outbox_waits_for_capacity(self, world, config, vocab):
        cloud = CloudServer(config, vocab)
        link = FakeLink(capacity=0)
        cloud.attach(link)
        for k in range(2):
            cloud.on_keyframe(0, record(world, 0, k, robot0_pose(k)))
        kf = cloud.map[(0, 1)]
        kf.state = NavState.from_pose(kf.pose @ Pose(np.eye(3), [0.0, 0.02, 0.0]))
        cloud.optimize()
        cloud.poll()
        assert link.sent == [] and cloud.pending_outbound == 1
        link.capacity = None
        cloud.poll()
        assert cloud.pending_outbound == 0 and len(link.sent) == 1

    def test_loop_closure_cuts_trajectory_error(self, world, config, vocab):
        # out and back; the return leg re-observes the landmarks as new points
        # in a frame that slipped 4 cm between keyframes 3 and 4
        xs = [0.0, 0.3, 0.6, 0.9, 0.6, 0.3, 0.02]
        truth = [Pose(np.eye(3), [x, 0.0, 0.0]) for x in xs]
        drift = Pose(np.eye(3), [0.04, 0.0, 0.0])
        cloud = CloudServer(config, vocab)
        for k, T_wc in enumerate(truth):
            if k < 4:
                rec = record(world, 0, k, T_wc)
            else:
                rec = record(world, 0, k, T_wc, drift.inverse())
                ids = np.array([global_point_id(0, LANDMARKS + i) for i in range(LANDMARKS)], dtype=np.int64)
                rec = replace(rec, point_ids=ids, points=dict(zip(map(int, ids), rec.points.values())))
            cloud.map.add_keyframe(0, rec)

        def ate() -> float:
            errors = [cloud.map[(0, k)].pose.translation_error(T_wc) for k, T_wc in enumerate(truth)]
            return float(np.sqrt(np.mean(np.square(errors))))

        before = ate()
        assert before > 0.02
        relative = truth[6].inverse() @ truth[0]
        cloud.close_loop(LoopEdge((0, 6), (0, 0), relative, LANDMARKS))
        assert ate() <= 0.7 * before
        assert cloud.summary()["loops_intra"] == 1
        assert cloud.map[(0, 0)].pose.translation_error(truth[0]) < 1e-3
        cloud.map.check_consistency()

    def test_optimize_without_anchor_is_skipped(self, world, config, vocab):
        cloud = CloudServer(config, vocab)
        cloud.on_keyframe(0, record(world, 0, 0, robot0_pose(0)))
        cloud.map.anchors.clear()
        assert cloud.optimize() is None
        assert cloud.counters.optimizations == 0

    def test_finalize_and_dump(self, world, config, vocab, tmp_path):
        cloud = CloudServer(config, vocab)
        for k in range(5):
            cloud.on_keyframe(0, record(world, 0, k, robot0_pose(k)))
        result = cloud.finalize()
        assert result is not None
        assert cloud.counters.culled == 2
        path = tmp_path / "cloud_map.txt"
        cloud.dump_map(path)
        assert path.read_text().count("\nKF ") == len(cloud.map)
        assert set(cloud.trajectories()) == {0}
