"""End-to-end orchestration: robots, one edge and one cloud joined by links."""

import logging
import time
from collections.abc import Iterator, Sequence
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from cloud.server import CloudServer
from codec.vocabulary import Vocabulary, train_vocabulary
from config import AppConfig, PipelineMode, TransportType
from edge.server import EdgeServer
from harness.asl import AslDataset
from harness.errors import ComponentError, HarnessError
from harness.io import StampedTrajectory, write_tum
from harness.report import RunReport, codec_statistics, evaluate_gates, joint_ate, trajectory_ates
from harness.robot import RobotAgent
from harness.scenario import RobotStream, Scenario, generate_scenario
from imu.types import ImuBias
from tracking.descriptor import describe_keypoints
from tracking.features import detect_keypoints
from tracking.image import build_pyramid
from wire.errors import WireError
from wire.sim_transport import SimNetwork
from wire.stats import SessionLog, bandwidth_report
from wire.tcp_transport import TcpNetwork

logger = logging.getLogger(__name__)

MAX_PUMP_ROUNDS = 10_000
VOCAB_SEED = 0


@contextmanager
def _component(name: str) -> Iterator[None]:
    """Re-raise anything a component throws as ComponentError tagged with its name."""
    try:
        yield
    except ComponentError:
        raise
    except Exception as e:
        raise ComponentError(name, e) from e


def _dataset_descriptors(config: AppConfig, frames: Sequence, limit: int) -> np.ndarray:
    trk = config.tracking
    chunks, total = [], 0
    for frame in frames:
        if frame.image is None:
            continue
        pyramid = build_pyramid(frame.image, trk.scale_ratio, trk.num_levels)
        keypoints = detect_keypoints(pyramid, trk.target_features, trk.grid_cells, trk.fast_threshold)
        _, descriptors = describe_keypoints(pyramid, keypoints, config.codec.n_theta)
        chunks.append(descriptors)
        total += len(descriptors)
        if total >= limit:
            break
    return np.vstack(chunks) if chunks else np.zeros((0, config.codec.descriptor_bits // 8), dtype=np.uint8)


def build_vocabulary(
    config: AppConfig,
    scenario: Scenario | None = None,
    datasets: Sequence[AslDataset] = (),
    seed: int = VOCAB_SEED,
) -> Vocabulary:
    """Load `codec.vocab_path` when set; otherwise train on the run's own descriptor distribution.

    Scenario runs sample fresh descriptors from the scenario prototypes;
    dataset runs detect and describe features on the sequence images.
    """
    if config.codec.vocab_path:
        vocab = Vocabulary.load(config.codec.vocab_path)
        logger.info(f"[Experiment] Loaded vocabulary {config.codec.vocab_path} ({vocab.size} words)")
        return vocab
    count = config.experiment.vocab_training_descriptors
    if scenario is not None:
        descriptors = scenario.training_descriptors(count, seed)
    else:
        descriptors = np.vstack(
            [_dataset_descriptors(config, d.frames, count // max(len(datasets), 1)) for d in datasets]
        )
    size = config.codec.vocab_size
    if len(descriptors) < size:
        logger.warning(
            f"[Experiment] Only {len(descriptors)} training descriptors; shrinking vocabulary from {size}"
        )
        size = max(len(descriptors), 1)
    return train_vocabulary(descriptors, size, seed)


def dataset_streams(datasets: Sequence[AslDataset]) -> list[RobotStream]:
    """One robot per dataset sequence; frame timestamps are shifted to start at zero."""
    streams = []
    for robot_id, dataset in enumerate(datasets):
        if not dataset.frames:
            raise HarnessError(f"Dataset {dataset.root} has no camera frames")
        t0 = dataset.frames[0].timestamp
        frames = [replace(f, timestamp=f.timestamp - t0) for f in dataset.frames]
        imu = [replace(s, timestamp=s.timestamp - t0) for s in dataset.imu]
        gt = dataset.ground_truth
        ground_truth = StampedTrajectory(gt.timestamps - t0, list(gt.poses)) if len(gt) else gt
        streams.append(RobotStream(robot_id, None, frames, imu, ground_truth, ImuBias()))
    return streams


@dataclass(eq=False)
class ExperimentRun:
    """Everything a finished run leaves behind, for reporting and inspection."""

    config: AppConfig
    streams: list[RobotStream]
    agents: list[RobotAgent]
    edge: EdgeServer
    cloud: CloudServer | None
    uplinks: dict[str, object]
    session_log: SessionLog
    duration: float
    cloud_before: dict
    timing: dict[str, float]


def _open_network(config: AppConfig, log: SessionLog):
    if config.experiment.transport == TransportType.TCP:
        return TcpNetwork(config.link, log, host=config.link.edge_host)
    return SimNetwork(config.link, log)


def _execute(config: AppConfig, streams: list[RobotStream], vocab: Vocabulary) -> ExperimentRun:
    exp = config.experiment
    full = exp.pipeline == PipelineMode.FULL
    log = SessionLog()
    network = _open_network(config, log)
    timing: dict[str, float] = {}
    try:
        edge = EdgeServer(config, vocab, exp.pipeline)
        cloud = CloudServer(config, vocab) if full else None
        agents, uplinks = [], {}
        for stream in streams:
            robot_link, edge_link = network.connect(f"robot{stream.robot_id}", f"edge{stream.robot_id}")
            agents.append(RobotAgent(stream.robot_id, config, vocab, stream.frames, stream.imu, robot_link))
            edge.attach_robot(stream.robot_id, edge_link)
            uplinks[f"robot{stream.robot_id}_to_edge"] = robot_link
            uplinks[f"edge_to_robot{stream.robot_id}"] = edge_link
        if cloud is not None:
            edge_link, cloud_link = network.connect("edge-cloud", "cloud")
            edge.attach_cloud(edge_link)
            cloud.attach(cloud_link)
            uplinks["edge_to_cloud"] = edge_link
            uplinks["cloud_to_edge"] = cloud_link

        def poll_all() -> int:
            handled = 0
            for agent in agents:
                with _component(f"Robot {agent.robot_id}"):
                    handled += agent.poll()
            with _component("Edge"):
                handled += edge.poll()
            if cloud is not None:
                with _component("Cloud"):
                    handled += cloud.poll()
            return handled

        def messages_sent() -> int:
            return sum(link.session.stats.messages_sent for link in uplinks.values())

        def pump(stage: str) -> None:
            for _ in range(MAX_PUMP_ROUNDS):
                sent = messages_sent()
                handled = poll_all()
                with _component("Link"):
                    idle = network.settle(exp.drain_timeout)
                pending = sum(a.pending for a in agents) + edge.pending_outbound
                if cloud is not None:
                    pending += cloud.pending_outbound
                if idle and not pending and not handled and messages_sent() == sent:
                    return
            raise ComponentError("Link", HarnessError(f"{stage} did not drain after {MAX_PUMP_ROUNDS} rounds"))

        started = time.perf_counter()
        now = 0.0
        while any(agent.next_time is not None for agent in agents):
            now += exp.tick
            for agent in agents:
                with _component(f"Robot {agent.robot_id}"):
                    agent.step(now)
            poll_all()
            with _component("Link"):
                network.run_until(now)
        duration = now
        timing["streaming"] = time.perf_counter() - started
        logger.info(f"[Experiment] Streams exhausted at t={duration:.2f} s; draining")

        started = time.perf_counter()
        for agent in agents:
            with _component(f"Robot {agent.robot_id}"):
                agent.finish()
        pump("robot drain")
        with _component("Edge"):
            edge.finish()
        pump("edge drain")
        timing["drain"] = time.perf_counter() - started

        cloud_before: dict = {}
        if cloud is not None:
            started = time.perf_counter()
            cloud_before = cloud.summary()
            with _component("Cloud"):
                cloud.finalize()
            pump("cloud drain")
            timing["finalize"] = time.perf_counter() - started
        return ExperimentRun(config, streams, agents, edge, cloud, uplinks, log, duration, cloud_before, timing)
    except WireError as e:
        raise ComponentError("Link", e) from e
    finally:
        network.close()


def _stamped(pairs: list) -> StampedTrajectory:
    return StampedTrajectory.from_pairs(pairs)


def compile_report(run: ExperimentRun) -> RunReport:
    config = run.config
    exp = config.experiment
    report = RunReport(robots=len(run.streams), duration=run.duration, pipeline=exp.pipeline.value)
    ground_truth = {s.robot_id: s.ground_truth for s in run.streams if len(s.ground_truth)}

    if exp.pipeline == PipelineMode.FULL:
        odometry = {
            rid: _stamped(session.trajectory_poses())
            for rid, session in run.edge.sessions.items()
            if rid in ground_truth and session.trajectory_poses()
        }
        report.edge_ate = trajectory_ates(odometry, ground_truth, exp.alignment)
        report.drift = {rid: session.mean_drift() for rid, session in sorted(run.edge.sessions.items())}
        report.relocalizations = sum(s.counters.relocalizations for s in run.edge.sessions.values())
        if run.cloud is not None:
            fused = {
                rid: _stamped(poses)
                for rid, poses in run.cloud.trajectories().items()
                if rid in ground_truth and poses
            }
            report.cloud_ate = trajectory_ates(fused, ground_truth, exp.alignment)
            if fused:
                try:
                    report.global_ate = joint_ate(fused, ground_truth, exp.alignment)
                except HarnessError as e:
                    logger.warning(f"[Report] Global ATE not evaluated: {e}")
            after = run.cloud.summary()
            report.keyframes_pre = run.cloud_before.get("keyframes", 0)
            report.points_pre = run.cloud_before.get("map_points", 0)
            report.keyframes_post = after["keyframes"]
            report.points_post = after["map_points"]
            report.virtual_keyframes = after["virtual_keyframes"]
            report.loops_intra = after["loops_intra"]
            report.loops_inter = after["loops_inter"]
            report.merged = bool(after["merged"])

    for name, endpoint in sorted(run.uplinks.items()):
        stats = endpoint.session.stats
        report.bandwidth_kbps[name] = bandwidth_report(stats, run.duration) if run.duration > 0 else 0.0
        report.link_bits[name] = stats.payload_bits
        report.retransmissions += stats.retransmissions
    uplink = [n for n in report.bandwidth_kbps if n.startswith("robot")]
    report.bandwidth_kbps["robots_to_edge_total"] = sum(report.bandwidth_kbps[n] for n in uplink)
    report.link_bits["robots_to_edge_total"] = sum(report.link_bits[n] for n in uplink)

    reports = [cost for agent in run.agents for cost in agent.costs.reports]
    report.bits_per_feature, report.bit_breakdown = codec_statistics(reports)
    report.timing = dict(run.timing)
    report.gates = evaluate_gates(report, config.acceptance)
    return report


def write_outputs(run: ExperimentRun, report: RunReport, out_dir: str | Path) -> Path:
    """TUM trajectories, map dump, cost CSVs, link log, edge diagnostics, metrics and summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for stream in run.streams:
        rid = stream.robot_id
        if len(stream.ground_truth):
            write_tum(out / f"robot{rid}_groundtruth.tum", stream.ground_truth)
        session = run.edge.sessions.get(rid)
        if session is not None:
            session.write_diagnostics(out / f"robot{rid}_edge.csv")
            poses = session.trajectory_poses()
            if poses:
                write_tum(out / f"robot{rid}_edge.tum", _stamped(poses))
        if run.cloud is not None and run.cloud.trajectory(rid):
            write_tum(out / f"robot{rid}_cloud.tum", _stamped(run.cloud.trajectory(rid)))
    for agent in run.agents:
        agent.costs.write_csv(out / f"robot{agent.robot_id}_costs.csv")
    if run.cloud is not None:
        run.cloud.dump_map(out / "global_map.txt")
    run.session_log.write_csv(out / "link_log.csv")
    report.write(out)
    return out


def run_experiment(
    config: AppConfig,
    scenario: Scenario | None = None,
    datasets: Sequence[AslDataset] = (),
    out_dir: str | Path | None = None,
    vocab: Vocabulary | None = None,
) -> RunReport:
    """Run robots, edge and cloud to stream exhaustion and report.

    With `datasets`, every ASL sequence becomes one robot's stream and only
    the stream pipeline runs (codec and link measurements). Otherwise the
    scenario is generated from the config when not given.

    Raises:
        ComponentError: a robot, the edge, the cloud or a link failed.
        ConfigValidationError: the configuration is invalid.
    """
    config.validate()
    started = time.perf_counter()
    if datasets:
        if config.experiment.pipeline != PipelineMode.STREAM:
            logger.info("[Experiment] Dataset replay runs the stream pipeline")
            config = replace(config, experiment=replace(config.experiment, pipeline=PipelineMode.STREAM))
        streams = dataset_streams(datasets)
    else:
        scenario = scenario if scenario is not None else generate_scenario(config)
        streams = scenario.robots
    if vocab is None:
        vocab = build_vocabulary(config, scenario if not datasets else None, datasets)
    if vocab.size != config.codec.vocab_size:
        config = replace(config, codec=replace(config.codec, vocab_size=vocab.size))
    setup_time = time.perf_counter() - started

    logger.info(
        f"[Experiment] {len(streams)} robots, pipeline {config.experiment.pipeline.value}, "
        f"transport {config.experiment.transport.value}"
    )
    run = _execute(config, streams, vocab)
    started = time.perf_counter()
    report = compile_report(run)
    report.timing["setup"] = setup_time
    report.timing["report"] = time.perf_counter() - started
    if out_dir is not None:
        write_outputs(run, report, out_dir)
    logger.info(
        f"[Experiment] Done: {'PASS' if report.passed else 'FAIL'} "
        f"({sum(report.gates.values())}/{len(report.gates)} gates)"
    )
    return report
