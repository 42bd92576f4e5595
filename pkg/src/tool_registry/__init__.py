"""Tool registrars: each one adds a group of SLAM tools to a FastMCP server."""

import logging
from typing import Callable, Sequence

from mcp.server.fastmcp import FastMCP

logger = logging.getLogger(__name__)

ToolRegistrar = Callable[[FastMCP], None]


def register_all_tools(mcp: FastMCP, registrars: Sequence[ToolRegistrar]) -> None:
    for registrar in registrars:
        registrar(mcp)
        logger.debug(f"[Server] Registered tool group {registrar.__name__}")
