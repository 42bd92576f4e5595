"""Entry point for the edge-assisted multi-robot SLAM stack."""

import argparse
import csv
import logging
import sys
from pathlib import Path

from codec.errors import CodecError
from codec.vocabulary import Vocabulary
from config import (
    AlignmentMode,
    AppConfig,
    ConfigValidationError,
    PipelineMode,
    TransportType,
    setup_logging,
)
from harness.ablation import run_rotation_ablation
from harness.asl import load_asl_dataset
from harness.codec_io import decode_container, encode_frames, write_container
from harness.errors import ComponentError, HarnessError
from harness.experiment import build_vocabulary, run_experiment
from harness.io import read_tum
from harness.metrics import evaluate_ate
from harness.scenario import generate_scenario, load_feature_dump

logger = logging.getLogger(__name__)

MCP_TRANSPORTS = ("stdio", "sse", "http")


def parse_arguments(argv: list[str] | None = None) -> argparse.Namespace:
    """Parse command line arguments."""
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="TOML configuration file (overrides EDGESLAM_CONFIG)")
    shared.add_argument("--seed", type=int, help="Scenario seed")
    shared.add_argument(
        "--transport",
        choices=[t.value for t in TransportType],
        help="Link transport between robots, edge and cloud",
    )
    shared.add_argument("--out", help="Output directory or file")
    shared.add_argument("--robots", type=int, help="Number of robots")

    parser = argparse.ArgumentParser(description="Edge-assisted multi-robot visual-inertial SLAM")
    verbs = parser.add_subparsers(dest="verb", required=True)

    verbs.add_parser("gen", parents=[shared], help="Generate a scenario and write it to disk")

    run = verbs.add_parser("run", parents=[shared], help="Run an end-to-end experiment")
    run.add_argument("--pipeline", choices=[p.value for p in PipelineMode])
    run.add_argument("--forced-keyframes", action="store_true", help="Encode every frame as a keyframe")
    run.add_argument("--dataset", action="append", default=[], help="ASL sequence directory, one per robot")
    run.add_argument("--vocab", help="Vocabulary file")

    encode = verbs.add_parser("encode", parents=[shared], help="Encode a feature dump or ASL sequence")
    source = encode.add_mutually_exclusive_group(required=True)
    source.add_argument("--features", help="features.npz written by 'gen'")
    source.add_argument("--asl", help="ASL sequence directory")
    encode.add_argument("--vocab", required=True, help="Vocabulary file")

    decode = verbs.add_parser("decode", parents=[shared], help="Decode an encoded-frame container")
    decode.add_argument("--input", required=True, help="Container written by 'encode'")
    decode.add_argument("--vocab", required=True, help="Vocabulary file")

    evaluate = verbs.add_parser("eval", parents=[shared], help="ATE between two TUM trajectories")
    evaluate.add_argument("--estimate", required=True)
    evaluate.add_argument("--groundtruth", required=True)
    evaluate.add_argument("--alignment", choices=[a.value for a in AlignmentMode], default="sim3")

    verbs.add_parser("vocab", parents=[shared], help="Train a vocabulary on scenario descriptors")

    ablate = verbs.add_parser("ablate", parents=[shared], help="Gyro-predicted vs zero-motion tracking study")
    ablate.add_argument("--degrees", type=float, default=8.0, help="Rotation per frame")
    ablate.add_argument("--frames", type=int, default=20)

    serve = verbs.add_parser("serve", parents=[shared], help="Start the MCP server")
    serve.add_argument("--mcp-transport", choices=MCP_TRANSPORTS, help="MCP transport")
    serve.add_argument("--host", help="Host for SSE/HTTP transport")
    serve.add_argument("--port", type=int, help="Port for SSE/HTTP transport")

    return parser.parse_args(argv)


def load_config(args: argparse.Namespace) -> AppConfig:
    """Environment first, then --config, then the shared flags."""
    app_config = AppConfig.from_env()
    if args.config:
        logging_config = app_config.logging
        app_config = AppConfig.from_toml(args.config)
        app_config.logging = logging_config
    if args.seed is not None:
        app_config.scenario.seed = args.seed
    if args.transport:
        app_config.experiment.transport = TransportType(args.transport)
    if args.robots is not None:
        app_config.scenario.robots = args.robots
    if args.out and args.verb in ("gen", "run", "ablate"):
        app_config.experiment.out_dir = args.out
    app_config.validate()
    return app_config


def cmd_gen(config: AppConfig, args: argparse.Namespace) -> int:
    scenario = generate_scenario(config)
    out = scenario.save(config.experiment.out_dir)
    for (a, b), shared in scenario.overlap().items():
        logger.info(f"Robots {a} and {b} share {shared} observed landmarks")
    print(f"Scenario written to {out}")
    return 0


def cmd_run(config: AppConfig, args: argparse.Namespace) -> int:
    if args.pipeline:
        config.experiment.pipeline = PipelineMode(args.pipeline)
    if args.forced_keyframes:
        config.codec.forced_keyframes = True
    if args.vocab:
        config.codec.vocab_path = args.vocab
    datasets = [load_asl_dataset(path) for path in args.dataset]
    report = run_experiment(config, datasets=datasets, out_dir=config.experiment.out_dir)
    print(report.summary())
    return 0 if report.passed else 1


def cmd_encode(config: AppConfig, args: argparse.Namespace) -> int:
    vocab = Vocabulary.load(args.vocab)
    config.codec.vocab_size = vocab.size
    frames = load_feature_dump(args.features) if args.features else load_asl_dataset(args.asl).frames
    encoded, p0, costs = encode_frames(config, vocab, frames)
    out = Path(args.out or "frames.bin")
    write_container(out, encoded, p0)
    costs.write_csv(out.with_suffix(".costs.csv"))
    total = sum(len(e.payload) for e in encoded) * 8
    print(f"{len(encoded)} frames, {total} bits, p0 {p0:.4f} -> {out}")
    return 0


def cmd_decode(config: AppConfig, args: argparse.Namespace) -> int:
    vocab = Vocabulary.load(args.vocab)
    config.codec.vocab_size = vocab.size
    frames = decode_container(config, vocab, args.input)
    out = Path(args.out or Path(args.input).with_suffix(".frames.csv"))
    with open(out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame_id", "timestamp", "mode", "features", "ref_frame_id"])
        for mode, frame in frames:
            writer.writerow([frame.frame_id, f"{frame.timestamp:.9f}", mode.value, frame.n_features, frame.ref_frame_id])
    print(f"Decoded {len(frames)} frames -> {out}")
    return 0


def cmd_eval(config: AppConfig, args: argparse.Namespace) -> int:
    rmse, alignment = evaluate_ate(read_tum(args.estimate), read_tum(args.groundtruth), AlignmentMode(args.alignment))
    print(f"ATE RMSE {rmse:.6f} m over {alignment.pairs} pairs (scale {alignment.scale:.6f})")
    return 0


def cmd_vocab(config: AppConfig, args: argparse.Namespace) -> int:
    vocab = build_vocabulary(config, generate_scenario(config))
    out = Path(args.out or "vocabulary.bin")
    vocab.save(out)
    print(f"{vocab.size} words, fingerprint {vocab.fingerprint:08x} -> {out}")
    return 0


def cmd_ablate(config: AppConfig, args: argparse.Namespace) -> int:
    report = run_rotation_ablation(config, args.degrees, args.frames)
    out = Path(config.experiment.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "ablation.csv")
    (out / "ablation.txt").write_text(report.summary())
    print(report.summary())
    return 0 if report.passed() else 1


def cmd_serve(config: AppConfig, args: argparse.Namespace) -> int:
    from server import create_mcp_server, create_server_info_tool, register_tools

    if args.mcp_transport:
        config.server.transport = args.mcp_transport
    if args.host:
        config.server.host = args.host
    if args.port is not None:
        config.server.port = args.port

    mcp = create_mcp_server(app_config=config)
    register_tools(mcp)
    create_server_info_tool(mcp, config=config)

    logger.info(f"Starting {config.server.server_name}")
    if config.server.transport != "stdio":
        logger.info(f"Listening on {config.server.host}:{config.server.port}")
    transport_value = config.server.transport
    if transport_value == "http":
        transport_value = "streamable-http"
    mcp.run(transport=transport_value)
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "run": cmd_run,
    "encode": cmd_encode,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "vocab": cmd_vocab,
    "ablate": cmd_ablate,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    """Main entry point; returns the process exit code."""
    args = parse_arguments(argv)
    try:
        config = load_config(args)
    except (ValueError, OSError) as e:
        setup_logging()
        logger.error(f"Invalid configuration: {e}")
        return 1
    setup_logging(config.logging.log_level)

    try:
        return COMMANDS[args.verb](config, args)
    except ComponentError as e:
        logger.error(f"[{e.component}] failed: {e.cause}")
        return 1
    except (HarnessError, CodecError, ConfigValidationError, OSError) as e:
        logger.error(f"{args.verb} failed: {e}")
        return 1
    except Exception as e:
        logger.error(f"Error running {args.verb}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
