"""Lossless feature coding: mode decision, bit costs, vocabulary and frame codec."""

from codec.costs import (
    CostLog,
    CostReport,
    decide_mode,
    estimate_p0,
    frame_cost,
    keypoint_cost,
    residual_cost,
    word_cost,
)
from codec.errors import (
    CodecError,
    ConfigMismatchError,
    CorruptPayloadError,
    InsufficientDataError,
    MissingDescriptorError,
    VocabularyFormatError,
)
from codec.frame_codec import (
    EncodedFrame,
    FeatureFrame,
    decode_frame,
    encode_frame,
    frames_equal,
    peek_mode,
    quantize_frame,
)
from codec.geometry import PyramidGeometry
from codec.vocabulary import Vocabulary, bow_lookup, train_vocabulary

__all__ = [
    "CodecError",
    "ConfigMismatchError",
    "CorruptPayloadError",
    "CostLog",
    "CostReport",
    "EncodedFrame",
    "FeatureFrame",
    "InsufficientDataError",
    "MissingDescriptorError",
    "PyramidGeometry",
    "Vocabulary",
    "VocabularyFormatError",
    "bow_lookup",
    "decide_mode",
    "decode_frame",
    "encode_frame",
    "estimate_p0",
    "frame_cost",
    "frames_equal",
    "keypoint_cost",
    "peek_mode",
    "quantize_frame",
    "residual_cost",
    "train_vocabulary",
    "word_cost",
]
