import copy
from typing import cast

from mcp.server.fastmcp import Context

from config import AppConfig
from server_context import SlamContext


def get_slam_context(ctx: Context) -> SlamContext:
    """Helper function to get the shared SLAM context from the lifespan."""
    return cast(SlamContext, ctx.request_context.lifespan_context)


def config_copy(ctx: Context) -> AppConfig:
    """A private copy of the server configuration that a tool call may override."""
    return copy.deepcopy(get_slam_context(ctx).config)
