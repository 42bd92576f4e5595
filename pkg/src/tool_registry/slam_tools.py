from mcp.server.fastmcp import FastMCP

from tools.slam_tools_codec import slam_frame_cost_tool, slam_train_vocabulary_tool
from tools.slam_tools_eval import slam_eval_ate_tool
from tools.slam_tools_experiments import slam_run_experiment_tool


def register_slam_tools(mcp: FastMCP):
    mcp.tool()(slam_run_experiment_tool)
    mcp.tool()(slam_frame_cost_tool)
    mcp.tool()(slam_eval_ate_tool)
    mcp.tool()(slam_train_vocabulary_tool)
