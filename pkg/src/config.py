"""Configuration for the edge-assisted SLAM stack."""

import dataclasses
import logging
import os
import sys
import zlib
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional

import colorlog
import dotenv
import tomli


class TransportType(str, Enum):
    """Available link transports."""

    SIM = "sim"
    TCP = "tcp"


class FrameMode(str, Enum):
    """Encoding mode of a transmitted frame."""

    KEYFRAME = "keyframe"
    NON_KEYFRAME = "non_keyframe"


class KernelKind(str, Enum):
    """Robust loss kernels used by the solvers."""

    HUBER = "huber"
    CAUCHY = "cauchy"


class TrajectoryKind(str, Enum):
    """Parametric trajectory generators for simulated robots."""

    CIRCLE = "circle"
    LISSAJOUS = "lissajous"
    WAYPOINTS = "waypoints"


class ScenarioMode(str, Enum):
    """Fidelity of generated sensor streams."""

    FEATURE = "feature"
    RASTER = "raster"


class AlignmentMode(str, Enum):
    """Trajectory alignment used before computing ATE."""

    SE3 = "se3"
    SIM3 = "sim3"


class PipelineMode(str, Enum):
    """Which tiers an experiment runs."""

    FULL = "full"
    STREAM = "stream"


class ConfigValidationError(ValueError):
    """Raised when a configuration value is invalid; the message names the field path."""

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


@dataclass
class CameraConfig:
    """Pinhole camera defaults (EuRoC cam0)."""

    fx: float = 458.654
    fy: float = 457.296
    cx: float = 367.215
    cy: float = 248.375
    width: int = 752
    height: int = 480
    fps: float = 20.0


@dataclass
class ImuConfig:
    """IMU noise model and factor weighting (ADIS16448 regime)."""

    rate: float = 200.0
    gyro_noise_density: float = 1.6968e-4
    accel_noise_density: float = 2.0e-3
    gyro_bias_walk: float = 1.9393e-5
    accel_bias_walk: float = 3.0e-3
    gravity: tuple[float, float, float] = (0.0, 0.0, -9.81)
    # Multipliers on the diagonal information derived from the densities
    weight_rotation: float = 1.0
    weight_velocity: float = 1.0
    weight_position: float = 1.0


@dataclass
class TrackingConfig:
    """Front-end detection and IMU-assisted LK tracking."""

    scale_ratio: float = 1.2
    num_levels: int = 8
    target_features: int = 150
    grid_cells: int = 8
    fast_threshold: int = 20
    lk_window: int = 21
    lk_max_iters: int = 30
    lk_max_residual: float = 20.0
    lk_min_eigen: float = 1e-4
    rotation_threshold: float = 3.0
    ransac_iterations: int = 100
    ransac_reproj_threshold: float = 2.0
    ransac_min_inlier_ratio: float = 0.3
    min_tracked_inliers: int = 15
    nominal_depth: float = 5.0


@dataclass
class CodecConfig:
    """Feature codec parameters shared by robot, edge and cloud."""

    n_sigma: int = 8
    n_theta: int = 32
    base_width: int = 752
    base_height: int = 480
    scale_ratio: float = 1.2
    vocab_size: int = 65536
    descriptor_bits: int = 256
    p0_kf: float = 0.9
    kf_min_tracked: int = 60
    kf_max_interval: float = 0.5
    calibration_keyframes: int = 10
    forced_keyframes: bool = False
    vocab_path: Optional[str] = None

    def p0_quantized(self) -> int:
        """p0 as the 16-bit fixed-point probability used by the arithmetic coder."""
        return min(max(int(round(self.p0_kf * 65536)), 1), 65535)

    def fingerprint(self, vocab_fingerprint: int = 0) -> int:
        """CRC32 over everything both codec endpoints must agree on."""
        text = (
            f"{self.n_sigma}|{self.n_theta}|{self.base_width}|{self.base_height}|"
            f"{self.scale_ratio:.9f}|{self.vocab_size}|{self.descriptor_bits}|"
            f"{self.p0_quantized()}|{vocab_fingerprint:08x}"
        )
        return zlib.crc32(text.encode("ascii")) & 0xFFFFFFFF


@dataclass
class LinkConfig:
    """Reliable link behavior and endpoints."""

    ack_timeout: float = 0.2
    backoff: float = 2.0
    max_timeout: float = 3.2
    max_retries: int = 10
    max_queue: int = 512
    max_payload: int = 1 << 20
    edge_host: str = "127.0.0.1"
    edge_port: int = 7070
    cloud_host: str = "127.0.0.1"
    cloud_port: int = 7071
    # Simulated transport
    drop_rate: float = 0.0
    duplicate_rate: float = 0.0
    latency: float = 0.005
    jitter: float = 0.0
    seed: int = 7


@dataclass
class VioConfig:
    """Edge visual-inertial odometry."""

    window_size: int = 10
    max_local_keyframes: int = 40
    obs_sigma_px: float = 1.0
    cauchy_delta: float = 2.5
    huber_delta: float = 4.0
    max_iters: int = 10
    init_min_correspondences: int = 50
    init_min_parallax_deg: float = 1.0
    init_max_frames: int = 12
    triangulation_max_reproj: float = 2.0
    triangulation_min_parallax_deg: float = 0.5
    inertial_min_keyframes: int = 4
    inertial_min_span: float = 2.0
    inertial_min_accel_std: float = 0.05
    inertial_refresh_keyframes: int = 10
    bias_resend_ratio: float = 0.1
    pose_window: int = 3
    match_max_hamming: int = 64
    match_ratio: float = 0.8
    relocalization_candidates: int = 3
    mapping_queue: int = 4


@dataclass
class CloudConfig:
    """Cloud map fusion and global optimization."""

    loop_alpha: float = 0.75
    loop_min_score: float = 0.05
    temporal_exclusion: float = 10.0
    min_loop_inliers: int = 20
    loop_cooldown: float = 10.0
    cross_check_rotation_deg: float = 3.0
    cross_check_translation: float = 0.1
    fuse_radius_px: float = 2.0
    fuse_max_hamming: int = 64
    cull_threshold: float = 0.9
    cull_min_observers: int = 3
    cull_keep_recent: int = 5
    mbp_enabled: bool = True
    mbp_cluster_radius: float = 0.25
    mbp_cluster_angle_deg: float = 15.0
    mbp_min_cluster: int = 3
    pose_graph_only: bool = False
    max_iters: int = 15
    prior_weight: float = 1.0e6


@dataclass
class ScenarioConfig:
    """Synthetic world and robot motion."""

    mode: ScenarioMode = ScenarioMode.FEATURE
    robots: int = 2
    duration: float = 60.0
    trajectory: TrajectoryKind = TrajectoryKind.CIRCLE
    radius: float = 2.0
    period: float = 20.0
    height: float = 1.5
    robot_spacing: float = 1.0
    landmark_count: int = 2000
    room_size: tuple[float, float, float] = (14.0, 14.0, 4.0)
    max_range: float = 12.0
    obs_noise_px: float = 0.5
    descriptor_prototypes: int = 4096
    descriptor_flip_prob: float = 0.13
    observation_flip_prob: float = 0.02
    imu_noise: bool = True
    initial_gyro_bias: tuple[float, float, float] = (0.002, -0.001, 0.0015)
    initial_accel_bias: tuple[float, float, float] = (0.02, -0.01, 0.015)
    texture_seed: int = 3
    seed: int = 1


@dataclass
class ExperimentConfig:
    """End-to-end orchestration."""

    pipeline: PipelineMode = PipelineMode.FULL
    transport: TransportType = TransportType.SIM
    out_dir: str = "runs/latest"
    vocab_training_descriptors: int = 100000
    tick: float = 0.005
    drain_timeout: float = 30.0
    alignment: AlignmentMode = AlignmentMode.SIM3


@dataclass
class AcceptanceConfig:
    """Gates deciding the exit status of `edgeslam run`."""

    max_global_ate: float = 0.5
    max_global_to_single_ratio: float = 1.5
    require_merge: bool = True
    max_nonkf_bits_per_feature: float = 27.0


@dataclass
class ServerConfig:
    """Defaults for the MCP tool server."""

    transport: str = "stdio"
    host: str = "localhost"
    port: int = 8005
    server_name: str = "Edge SLAM MCP"


@dataclass
class LoggingConfig:
    """Configuration for logging."""

    log_level: int = logging.INFO


_SECTIONS = {
    "camera": CameraConfig,
    "imu": ImuConfig,
    "tracking": TrackingConfig,
    "codec": CodecConfig,
    "link": LinkConfig,
    "vio": VioConfig,
    "cloud": CloudConfig,
    "scenario": ScenarioConfig,
    "experiment": ExperimentConfig,
    "acceptance": AcceptanceConfig,
    "server": ServerConfig,
}


@dataclass
class AppConfig:
    """Master application configuration containing all sub-configurations."""

    camera: CameraConfig = field(default_factory=CameraConfig)
    imu: ImuConfig = field(default_factory=ImuConfig)
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    codec: CodecConfig = field(default_factory=CodecConfig)
    link: LinkConfig = field(default_factory=LinkConfig)
    vio: VioConfig = field(default_factory=VioConfig)
    cloud: CloudConfig = field(default_factory=CloudConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    acceptance: AcceptanceConfig = field(default_factory=AcceptanceConfig)
    server: ServerConfig = field(default_factory=ServerConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)

    @classmethod
    def from_env(cls) -> "AppConfig":
        """
        Create AppConfig from environment variables.
        Loads .env, then an optional TOML file named by EDGESLAM_CONFIG,
        then the address and log-level overrides.
        """
        dotenv.load_dotenv()

        config_path = os.getenv("EDGESLAM_CONFIG")
        app_config = cls.from_toml(config_path) if config_path else cls()

        edge_addr = os.getenv("EDGESLAM_EDGE_ADDR")
        if edge_addr:
            host, port = parse_address(edge_addr, "EDGESLAM_EDGE_ADDR")
            app_config.link.edge_host, app_config.link.edge_port = host, port
        cloud_addr = os.getenv("EDGESLAM_CLOUD_ADDR")
        if cloud_addr:
            host, port = parse_address(cloud_addr, "EDGESLAM_CLOUD_ADDR")
            app_config.link.cloud_host, app_config.link.cloud_port = host, port

        log_level_str = os.getenv("LOG_LEVEL", "INFO").upper()
        app_config.logging = LoggingConfig(
            log_level=getattr(logging, log_level_str, logging.INFO)
        )
        return app_config

    @classmethod
    def from_toml(cls, path: str | Path) -> "AppConfig":
        """Load a hierarchical TOML configuration on top of the defaults.

        Raises:
            ConfigValidationError: unknown section/key, wrong type or bad range.
        """
        with open(path, "rb") as f:
            data = tomli.load(f)
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AppConfig":
        app_config = cls()
        for section_name, values in data.items():
            if section_name not in _SECTIONS:
                raise ConfigValidationError(section_name, "unknown section")
            if not isinstance(values, dict):
                raise ConfigValidationError(section_name, "expected a table")
            section = getattr(app_config, section_name)
            _apply_section(section, section_name, values)
        app_config.validate()
        return app_config

    def validate(self) -> None:
        """Range and cross-section checks. Raises ConfigValidationError."""
        checks = [
            ("camera.fx", self.camera.fx > 0, "must be > 0"),
            ("camera.fy", self.camera.fy > 0, "must be > 0"),
            ("camera.cx", 0 < self.camera.cx < self.camera.width, "must be in (0, width)"),
            ("camera.cy", 0 < self.camera.cy < self.camera.height, "must be in (0, height)"),
            ("camera.fps", self.camera.fps > 0, "must be > 0"),
            ("imu.rate", self.imu.rate > 0, "must be > 0"),
            ("imu.gyro_noise_density", self.imu.gyro_noise_density >= 0, "must be >= 0"),
            ("imu.accel_noise_density", self.imu.accel_noise_density >= 0, "must be >= 0"),
            ("imu.gyro_bias_walk", self.imu.gyro_bias_walk >= 0, "must be >= 0"),
            ("imu.accel_bias_walk", self.imu.accel_bias_walk >= 0, "must be >= 0"),
            ("tracking.scale_ratio", self.tracking.scale_ratio > 1.0, "must be > 1"),
            ("tracking.num_levels", self.tracking.num_levels >= 1, "must be >= 1"),
            ("tracking.lk_window", self.tracking.lk_window % 2 == 1, "must be odd"),
            (
                "tracking.ransac_min_inlier_ratio",
                0.0 <= self.tracking.ransac_min_inlier_ratio <= 1.0,
                "must be in [0, 1]",
            ),
            ("codec.n_sigma", self.codec.n_sigma >= 1, "must be >= 1"),
            ("codec.n_theta", self.codec.n_theta >= 1, "must be >= 1"),
            ("codec.vocab_size", self.codec.vocab_size >= 1, "must be >= 1"),
            ("codec.p0_kf", 0.0 < self.codec.p0_kf < 1.0, "must be in (0, 1)"),
            ("codec.descriptor_bits", self.codec.descriptor_bits % 8 == 0, "must be a multiple of 8"),
            (
                "codec.n_sigma",
                self.codec.n_sigma == self.tracking.num_levels,
                "must equal tracking.num_levels",
            ),
            (
                "codec.base_width",
                self.codec.base_width == self.camera.width,
                "must equal camera.width",
            ),
            (
                "codec.base_height",
                self.codec.base_height == self.camera.height,
                "must equal camera.height",
            ),
            ("link.ack_timeout", self.link.ack_timeout > 0, "must be > 0"),
            ("link.backoff", self.link.backoff >= 1.0, "must be >= 1"),
            ("link.max_queue", self.link.max_queue >= 1, "must be >= 1"),
            ("link.drop_rate", 0.0 <= self.link.drop_rate < 1.0, "must be in [0, 1)"),
            ("vio.window_size", self.vio.window_size >= 2, "must be >= 2"),
            ("vio.cauchy_delta", self.vio.cauchy_delta > 0, "must be > 0"),
            ("vio.huber_delta", self.vio.huber_delta > 0, "must be > 0"),
            ("vio.mapping_queue", self.vio.mapping_queue >= 1, "must be >= 1"),
            ("cloud.loop_alpha", 0.0 < self.cloud.loop_alpha <= 1.0, "must be in (0, 1]"),
            ("cloud.cull_threshold", 0.0 < self.cloud.cull_threshold <= 1.0, "must be in (0, 1]"),
            ("cloud.loop_cooldown", self.cloud.loop_cooldown >= 0, "must be >= 0"),
            ("scenario.robots", self.scenario.robots >= 1, "must be >= 1"),
            ("scenario.duration", self.scenario.duration > 0, "must be > 0"),
            ("scenario.landmark_count", self.scenario.landmark_count >= 1, "must be >= 1"),
            (
                "scenario.descriptor_flip_prob",
                0.0 <= self.scenario.descriptor_flip_prob < 0.5,
                "must be in [0, 0.5)",
            ),
        ]
        for path, ok, reason in checks:
            if not ok:
                raise ConfigValidationError(path, reason)

    def fingerprint(self, vocab_fingerprint: int = 0) -> int:
        """CRC32 over everything both codec endpoints must agree on."""
        return self.codec.fingerprint(vocab_fingerprint)

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for name in _SECTIONS:
            section = dataclasses.asdict(getattr(self, name))
            out[name] = {
                k: (v.value if isinstance(v, Enum) else v)
                for k, v in section.items()
                if v is not None
            }
        return out


def _apply_section(section: Any, section_name: str, values: dict[str, Any]) -> None:
    fields_by_name = {f.name: f for f in dataclasses.fields(section)}
    for key, raw in values.items():
        path = f"{section_name}.{key}"
        if key not in fields_by_name:
            raise ConfigValidationError(path, "unknown key")
        current = getattr(section, key)
        setattr(section, key, _coerce(path, current, raw))


def _coerce(path: str, current: Any, raw: Any) -> Any:
    if isinstance(current, Enum):
        try:
            return type(current)(raw)
        except ValueError:
            allowed = ", ".join(m.value for m in type(current))
            raise ConfigValidationError(path, f"expected one of: {allowed}") from None
    if isinstance(current, bool):
        if not isinstance(raw, bool):
            raise ConfigValidationError(path, "expected a boolean")
        return raw
    if isinstance(current, int):
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ConfigValidationError(path, "expected an integer")
        return raw
    if isinstance(current, float):
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigValidationError(path, "expected a number")
        return float(raw)
    if isinstance(current, tuple):
        if not isinstance(raw, list) or len(raw) != len(current):
            raise ConfigValidationError(path, f"expected an array of {len(current)} numbers")
        return tuple(float(x) for x in raw)
    if current is None or isinstance(current, str):
        if not isinstance(raw, str):
            raise ConfigValidationError(path, "expected a string")
        return raw
    return raw


def parse_address(value: str, source: str) -> tuple[str, int]:
    """Split `host:port`; the error names the variable it came from."""
    host, sep, port = value.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise ConfigValidationError(source, f"expected host:port, got {value!r}")
    return host, int(port)


# Load environment variables once at module level
dotenv.load_dotenv()
LOG_LEVEL = getattr(logging, os.getenv("LOG_LEVEL", "INFO").upper(), logging.INFO)


def setup_logging(level: int = LOG_LEVEL) -> None:
    """Configure colored logging for the application."""
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(
        colorlog.ColoredFormatter(
            "%(log_color)s%(levelname)s%(reset)s:     %(message)s",
            log_colors={
                "DEBUG": "cyan",
                "INFO": "green",
                "WARNING": "yellow",
                "ERROR": "red",
                "CRITICAL": "red,bg_white",
            },
        )
    )

    logging.basicConfig(level=level, handlers=[handler], force=True)

    # Set log level for all existing loggers
    for logger_name in logging.root.manager.loggerDict:
        logging.getLogger(logger_name).setLevel(level)
