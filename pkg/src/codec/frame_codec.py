"""Intra-frame lossless feature coding.

Payload layout (MSB-first bits, zero padded to a whole byte):

    mode u1 (1 = keyframe) | fingerprint u32 | frame_id varint | timestamp f64 | n varint
    keyframe:      residual_bits varint
    non-keyframe:  has_ref u1 [ref_frame_id varint | n_ref varint | track bitmap n_ref bits]
    n x (level | u_sigma | v_sigma [| theta | word])      fixed-width fields
    keyframe:      arithmetic-coded residual bits of all n descriptors

Field widths are ceil(log2(range)) for the level count, W(sigma), H(sigma),
N_theta and the vocabulary size.
"""

import logging
from dataclasses import dataclass

import numpy as np

from codec.arithmetic import BinaryArithmeticDecoder, BinaryArithmeticEncoder
from codec.bitstream import BitReader, BitWriter
from codec.costs import CostReport, frame_cost
from codec.errors import ConfigMismatchError, CorruptPayloadError, MissingDescriptorError
from codec.geometry import PyramidGeometry, field_width
from codec.vocabulary import Vocabulary
from config import CodecConfig, FrameMode
from tracking.features import Keypoint

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FeatureFrame:
    """Features of one frame as produced by the robot front-end.

    Non-keyframes may name their reference frame; `tracked` is then a
    boolean mask over that frame's features whose True entries, in order,
    correspond to `keypoints`. Decoded keyframes also carry the vocabulary
    word of each descriptor in `words`.
    """

    frame_id: int
    timestamp: float
    keypoints: tuple[Keypoint, ...] = ()
    descriptors: np.ndarray | None = None
    ref_frame_id: int | None = None
    tracked: np.ndarray | None = None
    words: np.ndarray | None = None

    @property
    def n_features(self) -> int:
        return len(self.keypoints)


@dataclass(frozen=True, eq=False)
class EncodedFrame:
    mode: FrameMode
    frame_id: int
    timestamp: float
    payload: bytes
    cost_report: CostReport

    @property
    def payload_bits(self) -> int:
        return len(self.payload) * 8


def _fingerprint(cfg: CodecConfig, vocab: Vocabulary | None) -> int:
    return cfg.fingerprint(vocab.fingerprint if vocab is not None else 0)


def _check_geometry(cfg: CodecConfig, geom: PyramidGeometry) -> None:
    if geom.n_sigma != cfg.n_sigma:
        raise ValueError(f"Geometry has {geom.n_sigma} levels, codec expects {cfg.n_sigma}")


def quantize_frame(frame: FeatureFrame, mode: FrameMode, geom: PyramidGeometry) -> FeatureFrame:
    """The frame exactly as the decoder will reconstruct it."""
    keypoints = []
    for kp in frame.keypoints:
        level, u, v = geom.quantize(kp)
        fu, fv = geom.dequantize(level, u, v)
        theta = kp.orientation_bin if mode == FrameMode.KEYFRAME else None
        keypoints.append(Keypoint(fu, fv, level, theta))
    if mode == FrameMode.KEYFRAME:
        return FeatureFrame(frame.frame_id, frame.timestamp, tuple(keypoints), frame.descriptors)
    return FeatureFrame(
        frame.frame_id,
        frame.timestamp,
        tuple(keypoints),
        None,
        frame.ref_frame_id,
        None if frame.tracked is None else np.asarray(frame.tracked, dtype=bool),
    )


def frames_equal(a: FeatureFrame, b: FeatureFrame) -> bool:
    """Field-for-field equality of two (quantized) frames."""
    if (a.frame_id, a.timestamp, a.ref_frame_id) != (b.frame_id, b.timestamp, b.ref_frame_id):
        return False
    if a.keypoints != b.keypoints:
        return False
    for x, y in ((a.descriptors, b.descriptors), (a.tracked, b.tracked)):
        if (x is None) != (y is None):
            return False
        if x is not None and not np.array_equal(np.asarray(x), np.asarray(y)):
            return False
    return True


def encode_frame(
    frame: FeatureFrame,
    mode: FrameMode,
    vocab: Vocabulary | None,
    geom: PyramidGeometry,
    cfg: CodecConfig,
) -> EncodedFrame:
    """Encode a frame in keyframe or non-keyframe mode.

    Raises:
        MissingDescriptorError: keyframe without one descriptor per keypoint.
    """
    _check_geometry(cfg, geom)
    keyframe = mode == FrameMode.KEYFRAME
    if keyframe and vocab is None:
        raise MissingDescriptorError("Keyframe encoding needs a vocabulary")
    report = frame_cost(frame, mode, vocab, geom, cfg)
    n = frame.n_features

    words = residual_bits = None
    if keyframe and n:
        words, residuals, _ = vocab.lookup_many(frame.descriptors)
        residual_bits = np.unpackbits(residuals, axis=1, bitorder="little").reshape(-1)

    coded: list[int] = []
    if residual_bits is not None:
        encoder = BinaryArithmeticEncoder(cfg.p0_quantized())
        encoder.encode_all(residual_bits.tolist())
        coded = encoder.finish()

    writer = BitWriter()
    writer.write_bit(1 if keyframe else 0)
    writer.write_bits(_fingerprint(cfg, vocab), 32)
    writer.write_varint(frame.frame_id)
    writer.write_f64(frame.timestamp)
    writer.write_varint(n)
    side_bits = 0
    if keyframe:
        writer.write_varint(len(coded))
    else:
        has_ref = frame.ref_frame_id is not None and frame.tracked is not None
        writer.write_bit(1 if has_ref else 0)
        if has_ref:
            tracked = np.asarray(frame.tracked, dtype=bool)
            if int(tracked.sum()) != n:
                raise ValueError(f"Track bitmap has {int(tracked.sum())} set bits for {n} keypoints")
            writer.write_varint(frame.ref_frame_id)
            writer.write_varint(len(tracked))
            header_end = len(writer)
            writer.extend(tracked.tolist())
            side_bits = len(writer) - header_end
    header_bits = len(writer) - side_bits

    level_w = field_width(cfg.n_sigma)
    theta_w = field_width(cfg.n_theta)
    word_w = field_width(vocab.size) if keyframe else 0
    for i, kp in enumerate(frame.keypoints):
        level, u, v = geom.quantize(kp)
        writer.write_bits(level, level_w)
        writer.write_bits(u, field_width(geom.width(level)))
        writer.write_bits(v, field_width(geom.height(level)))
        if keyframe:
            theta = kp.orientation_bin
            if theta is None or not 0 <= theta < cfg.n_theta:
                raise MissingDescriptorError(f"Keyframe keypoint {i} has no valid orientation bin")
            writer.write_bits(theta, theta_w)
            writer.write_bits(int(words[i]), word_w)
    writer.extend(coded)

    payload = writer.to_bytes()
    report.header_bits = header_bits
    report.side_bits = side_bits
    report.body_bits = len(writer) - header_bits - side_bits
    report.actual_bits = len(payload) * 8
    logger.debug(
        f"[Codec] Frame {frame.frame_id} {mode.value}: {n} features, "
        f"{report.total_ideal_bits:.1f} ideal / {report.actual_bits} actual bits"
    )
    return EncodedFrame(mode, frame.frame_id, frame.timestamp, payload, report)


def peek_mode(payload: bytes) -> FrameMode:
    if not payload:
        raise CorruptPayloadError("Empty payload")
    return FrameMode.KEYFRAME if payload[0] & 0x80 else FrameMode.NON_KEYFRAME


def decode_frame(
    enc: EncodedFrame | bytes,
    vocab: Vocabulary | None,
    geom: PyramidGeometry,
    cfg: CodecConfig,
) -> FeatureFrame:
    """Exact inverse of encode_frame on quantized fields.

    Raises:
        CorruptPayloadError: truncated or over-long payload, or a bad field.
        ConfigMismatchError: the header fingerprint differs from (cfg, vocab).
    """
    _check_geometry(cfg, geom)
    payload = enc.payload if isinstance(enc, EncodedFrame) else bytes(enc)
    reader = BitReader(payload)
    keyframe = reader.read_bit() == 1
    found = reader.read_bits(32)
    expected = _fingerprint(cfg, vocab)
    if found != expected:
        raise ConfigMismatchError(expected, found)
    frame_id = reader.read_varint()
    timestamp = reader.read_f64()
    n = reader.read_varint()

    coded_len = 0
    ref_frame_id = tracked = None
    if keyframe:
        if vocab is None:
            raise MissingDescriptorError("Keyframe decoding needs a vocabulary")
        coded_len = reader.read_varint()
    elif reader.read_bit():
        ref_frame_id = reader.read_varint()
        n_ref = reader.read_varint()
        tracked = np.array([reader.read_bit() for _ in range(n_ref)], dtype=bool)
        if int(tracked.sum()) != n:
            raise CorruptPayloadError(f"Track bitmap has {int(tracked.sum())} set bits for {n} keypoints")

    level_w = field_width(cfg.n_sigma)
    theta_w = field_width(cfg.n_theta)
    word_w = field_width(vocab.size) if keyframe else 0
    fields = []
    for _ in range(n):
        level = reader.read_bits(level_w)
        if level >= geom.n_sigma:
            raise CorruptPayloadError(f"Level {level} out of range")
        u = reader.read_bits(field_width(geom.width(level)))
        v = reader.read_bits(field_width(geom.height(level)))
        if u >= geom.width(level) or v >= geom.height(level):
            raise CorruptPayloadError(f"Coordinate ({u}, {v}) outside level {level}")
        theta = word = None
        if keyframe:
            theta = reader.read_bits(theta_w)
            word = reader.read_bits(word_w)
            if theta >= cfg.n_theta or word >= vocab.size:
                raise CorruptPayloadError(f"Orientation {theta} or word {word} out of range")
        fields.append((level, u, v, theta, word))

    total_bits = reader.position + coded_len
    if len(payload) != (total_bits + 7) // 8:
        raise CorruptPayloadError(
            f"Payload has {len(payload)} bytes, header implies {(total_bits + 7) // 8}"
        )

    descriptors = words = None
    if keyframe and n:
        segment = BitReader(payload, total_bits)
        segment.position = reader.position
        decoder = BinaryArithmeticDecoder(segment, cfg.p0_quantized())
        bits = np.array(decoder.decode_many(n * cfg.descriptor_bits), dtype=np.uint8)
        residuals = np.packbits(bits.reshape(n, cfg.descriptor_bits), axis=1, bitorder="little")
        word_idx = np.array([f[4] for f in fields], dtype=int)
        descriptors = np.bitwise_xor(residuals, vocab.words[word_idx])
        words = word_idx
    elif keyframe:
        descriptors = np.zeros((0, cfg.descriptor_bits // 8), dtype=np.uint8)
        words = np.zeros(0, dtype=int)

    keypoints = []
    for level, u, v, theta, _ in fields:
        fu, fv = geom.dequantize(level, u, v)
        keypoints.append(Keypoint(fu, fv, level, theta))
    return FeatureFrame(frame_id, timestamp, tuple(keypoints), descriptors, ref_frame_id, tracked, words)

