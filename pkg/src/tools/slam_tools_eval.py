from typing import Any

from mcp.server.fastmcp import Context

from config import AlignmentMode
from harness.errors import HarnessError
from harness.io import read_tum
from harness.metrics import evaluate_ate


async def slam_eval_ate_tool(
    ctx: Context, estimate_path: str, groundtruth_path: str, alignment: str = "sim3"
) -> dict[str, Any]:
    """
    Absolute trajectory error (RMSE, meters) between two TUM trajectory files.

    Args:
        ctx (Context): The context object containing the request and lifespan context.
        estimate_path (str): Estimated trajectory (TUM format).
        groundtruth_path (str): Ground-truth trajectory (TUM format).
        alignment (str): "se3" or "sim3" alignment before the error is computed.
    return:
        dict: ate_rmse, pairs, scale and alignment, or "error".
    """
    try:
        mode = AlignmentMode(alignment)
        estimate = read_tum(estimate_path)
        groundtruth = read_tum(groundtruth_path)
        rmse, fitted = evaluate_ate(estimate, groundtruth, mode)
    except (HarnessError, ValueError) as e:
        return {"error": str(e)}
    return {"ate_rmse": rmse, "pairs": fitted.pairs, "scale": fitted.scale, "alignment": mode.value}
