import logging
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from typing import AsyncIterator

from mcp.server.fastmcp import FastMCP

from codec.vocabulary import Vocabulary
from config import AppConfig

logger = logging.getLogger(__name__)


@dataclass
class SlamContext:
    config: AppConfig
    vocabularies: dict[str, Vocabulary] = field(default_factory=dict)
    last_report: dict | None = None

    def vocabulary(self, path: str) -> Vocabulary:
        """Load a vocabulary file once per server lifetime."""
        vocab = self.vocabularies.get(path)
        if vocab is None:
            vocab = Vocabulary.load(path)
            self.vocabularies[path] = vocab
            logger.info(f"[Server] Loaded vocabulary {path} ({vocab.size} words)")
        return vocab


@asynccontextmanager
async def slam_lifespan(server: FastMCP, config: AppConfig) -> AsyncIterator[SlamContext]:
    """
    Hold the application configuration and cached vocabularies for the server's lifetime.

    Args:
        server: FastMCP server instance
        config: Complete application configuration

    Yields:
        SlamContext shared by every tool call
    """
    context = SlamContext(config=config)
    try:
        yield context
    finally:
        context.vocabularies.clear()
