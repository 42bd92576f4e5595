"""Codec tools: frame cost breakdowns and vocabulary training."""

import asyncio
import logging
from typing import Any, Optional

import numpy as np
from mcp.server.fastmcp import Context

from codec.costs import frame_cost
from codec.errors import CodecError
from codec.geometry import PyramidGeometry
from codec.vocabulary import Vocabulary, train_vocabulary
from config import FrameMode
from harness.codec_io import synthetic_frame
from harness.scenario import flip_bits
from tools.slam_tools_generic import config_copy, get_slam_context

logger = logging.getLogger(__name__)

TOY_VOCAB_SIZE = 1024


def _toy_vocabulary(size: int, descriptor_bits: int, seed: int) -> Vocabulary:
    rng = np.random.default_rng(seed)
    return Vocabulary(rng.integers(0, 256, size=(size, descriptor_bits // 8), dtype=np.uint8))


async def slam_frame_cost_tool(
    ctx: Context,
    features: int = 150,
    mode: str = "keyframe",
    vocab_path: Optional[str] = None,
    seed: int = 0,
) -> dict[str, Any]:
    """
    Ideal bit cost of a synthetic frame, per feature and per component.

    Args:
        ctx (Context): The context object containing the request and lifespan context.
        features (int): Number of features in the frame.
        mode (str): "keyframe" or "non_keyframe".
        vocab_path (Optional[str]): Vocabulary file; a random 1024-word vocabulary when omitted.
        seed (int): Seed for keypoint and descriptor sampling.
    return:
        dict: keypoint, word and residual bits, totals and bits per feature, or "error".
    """
    config = config_copy(ctx)
    try:
        frame_mode = FrameMode(mode)
        if vocab_path:
            vocab = get_slam_context(ctx).vocabulary(vocab_path)
        else:
            vocab = _toy_vocabulary(TOY_VOCAB_SIZE, config.codec.descriptor_bits, seed)
        config.codec.vocab_size = vocab.size
        frame = synthetic_frame(config, vocab, features, seed)
        report = frame_cost(frame, frame_mode, vocab, PyramidGeometry.from_config(config.codec), config.codec)
    except (CodecError, ValueError, OSError) as e:
        return {"error": str(e)}

    n = max(report.n_features, 1)
    return {
        "mode": frame_mode.value,
        "features": report.n_features,
        "vocab_size": vocab.size,
        "keypoint_bits": report.kp_bits,
        "word_bits": report.bow_bits,
        "residual_bits": report.res_bits,
        "total_bits": report.total_ideal_bits,
        "bits_per_feature": report.total_ideal_bits / n,
    }


async def slam_train_vocabulary_tool(
    ctx: Context,
    out_path: str,
    size: int = 4096,
    descriptors: int = 20000,
    prototypes: int = 4096,
    seed: int = 0,
) -> dict[str, Any]:
    """
    Train a binary vocabulary on synthetic descriptors and save it.

    Args:
        ctx (Context): The context object containing the request and lifespan context.
        out_path (str): Where to write the vocabulary file.
        size (int): Number of words.
        descriptors (int): Number of training descriptors.
        prototypes (int): Number of descriptor prototypes the training set is drawn around.
        seed (int): Training seed.
    return:
        dict: path, size and fingerprint of the vocabulary, or "error".
    """
    config = config_copy(ctx)
    rng = np.random.default_rng(seed)
    base = rng.integers(0, 256, size=(prototypes, config.codec.descriptor_bits // 8), dtype=np.uint8)
    training = flip_bits(base[rng.integers(0, prototypes, size=descriptors)], config.scenario.descriptor_flip_prob, rng)
    try:
        vocab = await asyncio.to_thread(train_vocabulary, training, size, seed)
        vocab.save(out_path)
    except (CodecError, ValueError, OSError) as e:
        logger.error(f"[Server] Vocabulary training failed: {e}")
        return {"error": str(e)}
    return {"path": out_path, "size": vocab.size, "fingerprint": f"{vocab.fingerprint:08x}"}
