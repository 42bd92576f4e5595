from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from conftest import ASL_MINI

from codec.costs import CostReport, FeatureCost
from codec.errors import CorruptPayloadError
from codec.frame_codec import encode_frame
from codec.geometry import PyramidGeometry
from config import AlignmentMode, FrameMode, PipelineMode
from geometry.pose import Pose
from geometry.so3 import so3_exp
from harness import (
    ComponentError,
    InsufficientAssociationError,
    MalformedRowError,
    MissingFileError,
    StampedTrajectory,
    evaluate_ate,
    read_tum,
    write_tum,
)
from harness.ablation import AblationFrame, AblationReport, run_rotation_ablation
from harness.asl import load_asl_dataset, write_asl_streams
from harness.codec_io import decode_container, encode_frames, read_container, synthetic_frame, write_container
from harness.experiment import run_experiment
from harness.metrics import associate, umeyama
from harness.report import RunReport, codec_statistics, evaluate_gates, joint_ate, trajectory_ates
from harness.scenario import flip_bits, generate_scenario, load_feature_dump, save_feature_dump
from imu.types import ImuSample
from tracking.image import save_gray


def wavy_trajectory(count: int = 30, dt: float = 0.1, t0: float = 0.0) -> StampedTrajectory:
    times = t0 + dt * np.arange(count)
    poses = [
        Pose(so3_exp(np.array([0.0, 0.0, 0.1 * k])), [np.cos(0.2 * k), np.sin(0.2 * k), 0.05 * k])
        for k in range(count)
    ]
    return StampedTrajectory(times, poses)


SIM = Pose(so3_exp(np.array([0.2, -0.1, 0.7])), [1.0, -2.0, 0.3])


class TestTrajectories:
    def test_tum_round_trip(self, tmp_path):
        traj = wavy_trajectory()
        path = tmp_path / "traj.tum"
        write_tum(path, traj)
        back = read_tum(path)
        assert np.allclose(back.timestamps, traj.timestamps)
        assert all(a.allclose(b, atol=1e-8) for a, b in zip(back.poses, traj.poses))

    def test_tum_reader_errors(self, tmp_path):
        with pytest.raises(MissingFileError):
            read_tum(tmp_path / "absent.tum")
        path = tmp_path / "bad.tum"
        path.write_text("# header\n0.0 0 0 0 0 0 0 1\n0.1 0 0 0 0 0 1\n")
        with pytest.raises(MalformedRowError) as excinfo:
            read_tum(path)
        assert excinfo.value.line == 3
        path.write_text("0.5 0 0 0 0 0 0 1\n0.2 0 0 0 0 0 0 1\n")
        with pytest.raises(MalformedRowError, match="increasing"):
            read_tum(path)

    def test_timestamps_must_increase(self):
        with pytest.raises(ValueError):
            StampedTrajectory(np.array([0.0, 0.0]), [Pose.identity(), Pose.identity()])
        traj = StampedTrajectory.from_pairs([(0.2, Pose.identity()), (0.1, SIM)])
        assert list(traj.timestamps) == [0.1, 0.2]
        assert traj.poses[0] is SIM

    def test_association_is_one_to_one(self):
        gt = StampedTrajectory(np.array([0.0, 1.0, 2.0]), [Pose.identity()] * 3)
        est = StampedTrajectory(np.array([0.004, 0.006, 1.5, 2.009]), [Pose.identity()] * 4)
        assert associate(est, gt) == [(0, 0), (3, 2)]

    def test_umeyama_recovers_similarity(self):
        rng = np.random.default_rng(0)
        source = rng.normal(size=(20, 3))
        target = 2.5 * source @ SIM.rotation.T + SIM.translation
        rotation, translation, scale = umeyama(source, target, with_scale=True)
        assert np.allclose(rotation, SIM.rotation, atol=1e-9)
        assert np.allclose(translation, SIM.translation, atol=1e-9)
        assert scale == pytest.approx(2.5)

    def test_ate_is_invariant_to_the_alignment(self):
        gt = wavy_trajectory()
        est = gt.transformed(SIM, scale=0.5)
        rmse, alignment = evaluate_ate(est, gt, AlignmentMode.SIM3)
        assert rmse < 1e-9
        assert alignment.scale == pytest.approx(2.0)
        rigid, _ = evaluate_ate(est, gt, AlignmentMode.SE3)
        assert rigid > 0.1

    def test_ate_needs_overlap(self):
        gt = wavy_trajectory()
        with pytest.raises(InsufficientAssociationError):
            evaluate_ate(wavy_trajectory(t0=100.0), gt)

    def test_joint_alignment_exposes_misplaced_robots(self):
        gt = {0: wavy_trajectory(), 1: wavy_trajectory(t0=0.05)}
        shared = {r: t.transformed(SIM) for r, t in gt.items()}
        assert joint_ate(shared, gt, AlignmentMode.SE3) < 1e-9
        apart = {0: shared[0], 1: gt[1].transformed(Pose(np.eye(3), [3.0, 0.0, 0.0]))}
        assert joint_ate(apart, gt, AlignmentMode.SE3) > 0.5
        per_robot = trajectory_ates(apart, gt, AlignmentMode.SE3)
        assert max(per_robot.values()) < 1e-9


class TestAsl:
    def write_sequence(self, root, frames: int = 4):
        rng = np.random.default_rng(1)
        imu = [ImuSample(0.005 * k, rng.normal(size=3), rng.normal(size=3)) for k in range(40)]
        gt = wavy_trajectory(count=10, dt=0.02)
        times = [0.05 * k for k in range(frames)]
        names = [f"{k:06d}.png" for k in range(frames)]
        write_asl_streams(root, imu, gt, times, names)
        for name in names:
            save_gray(root / "mav0/cam0/data" / name, rng.integers(0, 255, size=(48, 64)))
        return imu, gt, names

    def test_written_sequence_reads_back(self, tmp_path):
        imu, gt, names = self.write_sequence(tmp_path)
        dataset = load_asl_dataset(tmp_path)
        assert dataset.filenames == names
        assert [f.frame_id for f in dataset.frames] == [0, 1, 2, 3]
        assert dataset.frames[2].timestamp == pytest.approx(0.1)
        assert dataset.frames[0].image.shape == (48, 64)
        assert len(dataset.imu) == len(imu)
        assert np.allclose(dataset.imu[7].accel, imu[7].accel)
        assert all(a.allclose(b, atol=1e-9) for a, b in zip(dataset.ground_truth.poses, gt.poses))

    def test_missing_image(self, tmp_path):
        _, _, names = self.write_sequence(tmp_path)
        (tmp_path / "mav0/cam0/data" / names[1]).unlink()
        with pytest.raises(MissingFileError):
            load_asl_dataset(tmp_path)
        assert len(load_asl_dataset(tmp_path, load_images=False).frames) == 4

    def test_committed_sequence_loads(self):
        dataset = load_asl_dataset(ASL_MINI)
        assert len(dataset.frames) == 20
        assert dataset.frames[0].image.shape == (120, 160)
        assert dataset.frames[0].image.dtype == np.uint8
        assert dataset.frames[1].timestamp - dataset.frames[0].timestamp == pytest.approx(0.05)
        assert len(dataset.imu) == 77
        assert np.allclose(dataset.imu[0].accel, [9.80665, 0.012, -0.031])
        assert len(dataset.ground_truth) == 20
        assert np.allclose(dataset.ground_truth.poses[-1].translation, [0.58, -0.1, 0.9])
        # the texture slides two pixels per frame
        assert np.array_equal(dataset.frames[1].image[:, :-2], dataset.frames[0].image[:, 2:])

    def test_malformed_imu_row(self, tmp_path):
        self.write_sequence(tmp_path)
        csv_path = tmp_path / "mav0/imu0/data.csv"
        with open(csv_path, "a") as f:
            f.write("999999999999,0.1,0.2\n")
        with pytest.raises(MalformedRowError, match="columns"):
            load_asl_dataset(tmp_path, load_images=False)


class TestScenario:
    def test_flip_bits_extremes(self):
        rng = np.random.default_rng(0)
        desc = rng.integers(0, 256, size=(5, 32), dtype=np.uint8)
        same = flip_bits(desc, 0.0, rng)
        assert np.array_equal(same, desc) and same is not desc
        assert np.array_equal(flip_bits(desc, 1.0, rng), ~desc)

    def test_generation_is_deterministic(self, config):
        config.scenario.duration = 2.0
        a = generate_scenario(config, seed=5)
        b = generate_scenario(config, seed=5)
        c = generate_scenario(config, seed=6)
        assert len(a.robots) == 2
        assert len(a.robots[0].frames) == 41
        obs_a, obs_b = a.robots[1].frames[10].observations, b.robots[1].frames[10].observations
        assert np.array_equal(obs_a.pixels, obs_b.pixels)
        assert np.array_equal(obs_a.descriptors, obs_b.descriptors)
        assert np.allclose(a.robots[0].imu[50].accel, b.robots[0].imu[50].accel)
        assert not np.array_equal(a.landmarks.positions, c.landmarks.positions)
        assert set(a.overlap()) == {(0, 1)}

    def test_observations_stay_inside_the_image(self, config):
        config.scenario.duration = 1.0
        scenario = generate_scenario(config)
        for frame in scenario.robots[0].frames:
            obs = frame.observations
            assert len(obs) <= config.tracking.target_features
            assert (obs.pixels[:, 0] >= 0).all() and (obs.pixels[:, 0] <= config.camera.width - 1).all()
            assert (obs.levels >= 0).all() and (obs.levels < config.tracking.num_levels).all()

    def test_feature_dump_round_trip(self, config, tmp_path):
        config.scenario.duration = 0.5
        frames = generate_scenario(config).robots[0].frames
        save_feature_dump(tmp_path / "features.npz", frames)
        back = load_feature_dump(tmp_path / "features.npz")
        assert len(back) == len(frames)
        assert np.array_equal(back[4].observations.track_ids, frames[4].observations.track_ids)
        assert back[4].timestamp == frames[4].timestamp

    def test_save_writes_asl_layout(self, config, tmp_path):
        config.scenario.duration = 0.5
        generate_scenario(config).save(tmp_path)
        for robot in ("robot0", "robot1"):
            assert (tmp_path / robot / "mav0/imu0/data.csv").is_file()
            assert (tmp_path / robot / "features.npz").is_file()
            assert len(read_tum(tmp_path / robot / "groundtruth.tum")) == 11
        assert (tmp_path / "landmarks.npz").is_file()


class TestCodecContainer:
    def test_container_round_trip(self, config, vocab, tmp_path):
        geom = PyramidGeometry.from_config(config.codec)
        encoded = [
            encode_frame(
                replace(synthetic_frame(config, vocab, 60, seed=k), frame_id=k), FrameMode.KEYFRAME, vocab, geom,
                config.codec,
            )
            for k in range(3)
        ]
        path = tmp_path / "frames.esfc"
        write_container(path, encoded, config.codec.p0_kf)
        decoded = decode_container(config, vocab, path)
        assert [mode for mode, _ in decoded] == [FrameMode.KEYFRAME] * 3
        assert [frame.frame_id for _, frame in decoded] == [0, 1, 2]
        original = synthetic_frame(config, vocab, 60, seed=1)
        assert np.array_equal(decoded[1][1].descriptors, original.descriptors)

    def test_corrupt_containers(self, tmp_path):
        path = tmp_path / "frames.esfc"
        write_container(path, [SimpleNamespace(payload=b"abc"), SimpleNamespace(payload=b"de")], 0.9)
        payloads, p0 = read_container(path)
        assert payloads == [b"abc", b"de"] and p0 == 0.9
        data = path.read_bytes()
        for broken in (b"XXXX" + data[4:], data[:-1], data + b"\x00", data[:10]):
            path.write_bytes(broken)
            with pytest.raises(CorruptPayloadError):
                read_container(path)

    def test_encode_frames_from_a_scenario(self, config, vocab):
        config.scenario.duration = 2.0
        config.scenario.robots = 1
        frames = generate_scenario(config).robots[0].frames
        encoded, p0, costs = encode_frames(config, vocab, frames)
        assert len(encoded) == len(frames) == 41
        modes = [e.mode for e in encoded]
        assert modes[0] == FrameMode.KEYFRAME
        assert FrameMode.NON_KEYFRAME in modes
        # the age limit alone forces a keyframe at least every kf_max_interval
        keyframes = [k for k, mode in enumerate(modes) if mode == FrameMode.KEYFRAME]
        assert 2 <= len(keyframes) < len(frames) // 2
        assert max(np.diff(keyframes)) <= config.codec.kf_max_interval * config.camera.fps + 1
        assert 0.0 < p0 < 1.0
        assert len(costs.reports) == len(frames)

    @pytest.mark.slow
    def test_mixed_stream_is_four_times_smaller_than_all_keyframes(self, config, vocab):
        config.scenario.duration = 2.0
        config.scenario.robots = 1
        frames = generate_scenario(config).robots[0].frames
        mixed, _, _ = encode_frames(config, vocab, frames)
        config.codec.forced_keyframes = True
        forced, _, _ = encode_frames(config, vocab, frames)
        assert all(e.mode == FrameMode.KEYFRAME for e in forced)
        mixed_bits = sum(len(e.payload) for e in mixed) * 8
        forced_bits = sum(len(e.payload) for e in forced) * 8
        assert forced_bits >= 4 * mixed_bits


def cost_report(mode: FrameMode, features: int, bits: float, actual: int) -> CostReport:
    return CostReport(0, mode, [FeatureCost(bits)] * features, actual_bits=actual, body_bits=actual)


class TestReport:
    def test_codec_statistics(self):
        reports = [
            cost_report(FrameMode.KEYFRAME, 10, 100.0, 1200),
            cost_report(FrameMode.NON_KEYFRAME, 10, 20.0, 250),
            cost_report(FrameMode.NON_KEYFRAME, 0, 0.0, 40),
        ]
        per_feature, breakdown = codec_statistics(reports)
        assert per_feature["kf_frames"] == 1 and per_feature["nonkf_frames"] == 2
        assert per_feature["kf_actual"] == pytest.approx(120.0)
        assert per_feature["nonkf_ideal"] == pytest.approx(20.0)
        assert breakdown["actual"] == 1490
        assert breakdown["keypoint"] == pytest.approx(1200.0)

    def test_gates(self, config):
        report = RunReport(robots=2, duration=10.0, pipeline="full")
        report.global_ate = 0.1
        report.edge_ate = {0: 0.2, 1: 0.2}
        report.merged = True
        report.bits_per_feature = {"kf_frames": 3, "kf_actual": 80.0, "nonkf_frames": 10, "nonkf_actual": 20.0}
        gates = evaluate_gates(report, config.acceptance)
        assert gates == {
            "global_ate": True,
            "global_to_single_ratio": True,
            "merged": True,
            "nonkf_bits_per_feature": True,
            "nonkf_cheaper_than_kf": True,
        }
        report.merged = False
        report.bits_per_feature["nonkf_actual"] = 30.0
        gates = evaluate_gates(report, config.acceptance)
        assert not gates["merged"] and not gates["nonkf_bits_per_feature"]

    def test_absent_inputs_are_not_gated(self, config):
        report = RunReport(robots=1, duration=5.0, pipeline="stream")
        assert evaluate_gates(report, config.acceptance) == {}
        assert report.passed

    def test_written_report(self, tmp_path):
        report = RunReport(robots=1, duration=5.0, pipeline="stream", bandwidth_kbps={"robot0_to_edge": 12.5})
        report.timing["setup"] = 0.25
        report.write(tmp_path)
        metrics = (tmp_path / "metrics.csv").read_text().splitlines()
        assert metrics[0] == "metric,value"
        assert "bandwidth_kbps.robot0_to_edge,12.500000" in metrics
        assert metrics[-1] == "timing.setup,0.250"
        assert "overall: PASS" in (tmp_path / "summary.txt").read_text()

    def test_component_error_names_the_component(self):
        err = ComponentError("Edge", ValueError("boom"))
        assert str(err) == "[Edge] ValueError: boom"
        assert isinstance(err.cause, ValueError)


@pytest.mark.slow
def test_stream_pipeline_measures_bandwidth(config, tmp_path):
    config.scenario.robots = 1
    config.scenario.duration = 4.0
    config.experiment.pipeline = PipelineMode.STREAM
    report = run_experiment(config, out_dir=tmp_path)
    assert report.cloud_ate == {}
    assert report.bandwidth_kbps["robots_to_edge_total"] > 0
    assert report.bits_per_feature["kf_frames"] >= 1
    assert (tmp_path / "link_log.csv").is_file()
    assert not (tmp_path / "global_map.txt").exists()


@pytest.mark.slow
def test_full_pipeline_end_to_end(config, tmp_path):
    report = run_experiment(config, out_dir=tmp_path)
    assert report.robots == 2
    assert set(report.edge_ate) == {0, 1}
    assert report.merged and report.loops_inter >= 1
    assert report.global_ate is not None
    assert report.gates["global_ate"]
    assert report.gates["global_to_single_ratio"]
    assert report.gates["merged"]
    assert report.keyframes_pre > 0
    assert report.keyframes_post <= report.keyframes_pre
    assert report.gates["nonkf_cheaper_than_kf"]
    assert report.passed
    for name in ("metrics.csv", "summary.txt", "global_map.txt", "robot0_edge.tum", "robot1_costs.csv"):
        assert (tmp_path / name).is_file()


@pytest.mark.slow
def test_same_seed_reproduces_every_metric(config, vocab):
    first = run_experiment(config, vocab=vocab)
    second = run_experiment(config, vocab=vocab)
    assert first.metrics() == second.metrics()


@pytest.mark.slow
def test_rotation_ablation_favours_the_gyro(config, tmp_path):
    report = run_rotation_ablation(config, degrees_per_frame=8.0, frames=20)
    assert len(report.frames) == 20
    assert report.warp_points > 0
    assert report.passed(), report.summary()
    report.write_csv(tmp_path / "ablation.csv")
    assert len((tmp_path / "ablation.csv").read_text().splitlines()) == 21


def test_ablation_report_ratios():
    report = AblationReport(8.0, [AblationFrame(1, 100, 90, 40), AblationFrame(2, 100, 50, 60)], 200, 196)
    assert report.imu_win_ratio == 0.5
    assert report.warp_recovery_ratio == pytest.approx(0.98)
    assert not report.passed()
    assert report.passed(min_win_ratio=0.5)
    assert "gyro better in 50%" in report.summary()
