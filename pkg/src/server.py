"""FastMCP server exposing experiment, codec and evaluation tools."""

from pathlib import Path

import tomli
from mcp.server.fastmcp import FastMCP

from config import AppConfig
from server_context import slam_lifespan
from tool_registry import register_all_tools
from tool_registry.slam_tools import register_slam_tools

STDIO = "stdio"
PYPROJECT = Path(__file__).parent.parent / "pyproject.toml"


def get_version() -> str:
    """Package version from pyproject.toml, "unknown" when it cannot be read."""
    try:
        with open(PYPROJECT, "rb") as f:
            return tomli.load(f).get("project", {}).get("version", "unknown")
    except (OSError, tomli.TOMLDecodeError):
        return "unknown"


def create_mcp_server(app_config: AppConfig) -> FastMCP:
    """
    Build the server; every tool call sees one SlamContext for the server's lifetime.

    Args:
        app_config: Complete application configuration

    Returns:
        FastMCP: Server with no tools registered yet
    """

    def lifespan(server):
        return slam_lifespan(server, app_config)

    server_cfg = app_config.server
    if server_cfg.transport == STDIO:
        return FastMCP(name=server_cfg.server_name, lifespan=lifespan)
    return FastMCP(
        name=server_cfg.server_name,
        stateless_http=True,
        host=server_cfg.host,
        port=server_cfg.port,
        lifespan=lifespan,
    )


def register_tools(mcp: FastMCP) -> None:
    register_all_tools(mcp, [register_slam_tools])


def create_server_info_tool(mcp: FastMCP, config: AppConfig) -> None:
    """Register `mcp_server_info`, which reports the version and the experiment defaults."""
    server_cfg = config.server

    @mcp.tool()
    def mcp_server_info():
        """Returns information about the MCP server and the experiment defaults."""
        info = {
            "server_name": mcp.name,
            "version": get_version(),
            "transport": server_cfg.transport,
            "defaults": {
                "robots": config.scenario.robots,
                "duration": config.scenario.duration,
                "pipeline": config.experiment.pipeline.value,
                "link_transport": config.experiment.transport.value,
                "vocab_size": config.codec.vocab_size,
                "target_features": config.tracking.target_features,
                "codec_fingerprint": f"{config.fingerprint():08x}",
            },
        }
        if server_cfg.transport != STDIO:
            info["host"] = server_cfg.host
            info["port"] = str(server_cfg.port)
        return info
