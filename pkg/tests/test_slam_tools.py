from unittest.mock import patch

import numpy as np
import pytest

from geometry.pose import Pose
from geometry.so3 import so3_exp
from harness.io import StampedTrajectory, write_tum
from harness.report import RunReport
from server import create_mcp_server, create_server_info_tool, register_tools
from tools.slam_tools_codec import slam_frame_cost_tool, slam_train_vocabulary_tool
from tools.slam_tools_eval import slam_eval_ate_tool
from tools.slam_tools_experiments import slam_run_experiment_tool


@pytest.fixture
def trajectories(tmp_path):
    """A ground truth and an estimate that differs from it by a similarity transform."""
    poses = [Pose(so3_exp(np.array([0.0, 0.1 * k, 0.0])), [0.2 * k, np.sin(0.4 * k), 0.1]) for k in range(15)]
    gt = StampedTrajectory(0.1 * np.arange(15), poses)
    gt_path, est_path = tmp_path / "gt.tum", tmp_path / "est.tum"
    write_tum(gt_path, gt)
    write_tum(est_path, gt.transformed(Pose(so3_exp(np.array([0.3, 0.0, 0.0])), [1.0, -1.0, 0.5]), 2.0))
    return str(est_path), str(gt_path)


@pytest.mark.asyncio
async def test_frame_cost_keyframe_vs_non_keyframe(ctx):
    kf = await slam_frame_cost_tool(ctx, features=100, mode="keyframe", seed=2)
    nkf = await slam_frame_cost_tool(ctx, features=100, mode="non_keyframe", seed=2)

    assert kf["features"] == nkf["features"] == 100
    assert kf["vocab_size"] == 1024
    assert kf["word_bits"] == pytest.approx(100 * 10.0)
    assert kf["residual_bits"] > 0
    assert nkf["word_bits"] == 0 and nkf["residual_bits"] == 0
    assert nkf["total_bits"] < kf["total_bits"]
    assert kf["bits_per_feature"] == pytest.approx(kf["total_bits"] / 100)


@pytest.mark.asyncio
async def test_frame_cost_unknown_mode(ctx):
    result = await slam_frame_cost_tool(ctx, mode="intra")
    assert "error" in result


@pytest.mark.asyncio
async def test_frame_cost_missing_vocabulary(ctx, tmp_path):
    result = await slam_frame_cost_tool(ctx, vocab_path=str(tmp_path / "missing.bin"))
    assert "error" in result


@pytest.mark.asyncio
async def test_train_vocabulary_then_cost_with_it(ctx, tmp_path):
    path = str(tmp_path / "vocab.bin")
    trained = await slam_train_vocabulary_tool(ctx, out_path=path, size=16, descriptors=500, prototypes=64, seed=3)
    assert trained["path"] == path
    assert trained["size"] == 16
    assert len(trained["fingerprint"]) == 8

    result = await slam_frame_cost_tool(ctx, features=20, vocab_path=path)
    assert result["vocab_size"] == 16
    assert result["word_bits"] == pytest.approx(20 * 4.0)
    assert path in ctx.request_context.lifespan_context.vocabularies


@pytest.mark.asyncio
async def test_train_vocabulary_too_few_descriptors(ctx, tmp_path):
    result = await slam_train_vocabulary_tool(ctx, out_path=str(tmp_path / "v.bin"), size=64, descriptors=10)
    assert "error" in result
    assert not (tmp_path / "v.bin").exists()


@pytest.mark.asyncio
async def test_eval_ate(ctx, trajectories):
    estimate, groundtruth = trajectories
    sim3 = await slam_eval_ate_tool(ctx, estimate, groundtruth)
    assert sim3["ate_rmse"] == pytest.approx(0.0, abs=1e-6)
    assert sim3["pairs"] == 15
    assert sim3["scale"] == pytest.approx(0.5, rel=1e-6)

    se3 = await slam_eval_ate_tool(ctx, estimate, groundtruth, alignment="se3")
    assert se3["alignment"] == "se3"
    assert se3["ate_rmse"] > 0.1


@pytest.mark.asyncio
async def test_eval_ate_errors(ctx, trajectories, tmp_path):
    estimate, _ = trajectories
    assert "error" in await slam_eval_ate_tool(ctx, estimate, str(tmp_path / "none.tum"))
    assert "error" in await slam_eval_ate_tool(ctx, estimate, estimate, alignment="affine")


@pytest.mark.asyncio
async def test_run_experiment_applies_overrides(ctx, tmp_path):
    report = RunReport(robots=3, duration=5.0, pipeline="stream", edge_ate={0: 0.02, 1: 0.03, 2: 0.04})
    with patch("tools.slam_tools_experiments.run_experiment", return_value=report) as mock_run:
        result = await slam_run_experiment_tool(
            ctx, robots=3, duration=5.0, seed=9, pipeline="stream", forced_keyframes=True, out_dir=str(tmp_path)
        )

    config, scenario, datasets, out_dir = mock_run.call_args.args
    assert config.scenario.robots == 3
    assert config.scenario.seed == 9
    assert config.codec.forced_keyframes is True
    assert scenario is None and datasets == () and out_dir == str(tmp_path)
    # the server configuration itself is untouched
    assert ctx.request_context.lifespan_context.config.scenario.robots == 2

    assert result["passed"] == report.passed
    assert result["metrics"] == report.metrics()
    assert ctx.request_context.lifespan_context.last_report is result


@pytest.mark.asyncio
@pytest.mark.parametrize("kwargs", [{"pipeline": "batch"}, {"robots": 0}, {"duration": -1.0}])
async def test_run_experiment_rejects_bad_arguments(ctx, kwargs):
    with patch("tools.slam_tools_experiments.run_experiment") as mock_run:
        result = await slam_run_experiment_tool(ctx, **kwargs)
    assert "error" in result
    mock_run.assert_not_called()


@pytest.mark.asyncio
async def test_server_registers_every_tool(config):
    mcp = create_mcp_server(config)
    register_tools(mcp)
    create_server_info_tool(mcp, config)

    names = {tool.name for tool in await mcp.list_tools()}
    assert names == {
        "slam_run_experiment_tool",
        "slam_frame_cost_tool",
        "slam_eval_ate_tool",
        "slam_train_vocabulary_tool",
        "mcp_server_info",
    }
