"""Experiment tools: end-to-end runs from the MCP surface."""

import asyncio
import logging
from typing import Any, Optional

from mcp.server.fastmcp import Context

from config import ConfigValidationError, PipelineMode
from harness.errors import HarnessError
from harness.experiment import run_experiment
from tools.slam_tools_generic import config_copy, get_slam_context

logger = logging.getLogger(__name__)


async def slam_run_experiment_tool(
    ctx: Context,
    robots: Optional[int] = None,
    duration: Optional[float] = None,
    seed: Optional[int] = None,
    pipeline: Optional[str] = None,
    forced_keyframes: bool = False,
    out_dir: Optional[str] = None,
) -> dict[str, Any]:
    """
    Run a simulated multi-robot experiment (robots -> edge -> cloud) and report.

    Args:
        ctx (Context): The context object containing the request and lifespan context.
        robots (Optional[int]): Number of robots; defaults to the server configuration.
        duration (Optional[float]): Scenario length in seconds.
        seed (Optional[int]): Scenario seed.
        pipeline (Optional[str]): "full" (with cloud fusion) or "stream" (edge decode only).
        forced_keyframes (bool): Encode every frame as a keyframe (bandwidth baseline).
        out_dir (Optional[str]): Directory for trajectories, metrics.csv and summary.txt.
    return:
        dict: "passed", "metrics" and "summary", or "error".
    """
    config = config_copy(ctx)
    try:
        if robots is not None:
            config.scenario.robots = robots
        if duration is not None:
            config.scenario.duration = duration
        if seed is not None:
            config.scenario.seed = seed
        if pipeline is not None:
            config.experiment.pipeline = PipelineMode(pipeline)
        config.codec.forced_keyframes = forced_keyframes
        config.validate()
        report = await asyncio.to_thread(run_experiment, config, None, (), out_dir)
    except (ConfigValidationError, HarnessError, ValueError) as e:
        logger.error(f"[Server] Experiment failed: {e}")
        return {"error": str(e)}

    result = {"passed": report.passed, "metrics": report.metrics(), "summary": report.summary()}
    get_slam_context(ctx).last_report = result
    return result
