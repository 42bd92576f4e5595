import math
from dataclasses import replace

import numpy as np
import pytest

from codec.arithmetic import BinaryArithmeticDecoder, BinaryArithmeticEncoder
from codec.bitstream import BitReader, BitWriter
from codec.costs import CostLog, decide_mode, estimate_p0, frame_cost, keypoint_cost, residual_cost, word_cost
from codec.errors import (
    ConfigMismatchError,
    CorruptPayloadError,
    InsufficientDataError,
    MissingDescriptorError,
    VocabularyFormatError,
)
from codec.frame_codec import FeatureFrame, decode_frame, encode_frame, frames_equal, peek_mode, quantize_frame
from codec.geometry import PyramidGeometry, field_width
from codec.vocabulary import Vocabulary, bitwise_majority, train_vocabulary
from config import FrameMode
from harness.codec_io import synthetic_frame
from harness.scenario import flip_bits
from tracking.features import Keypoint


@pytest.fixture
def geom(config):
    return PyramidGeometry.from_config(config.codec)


@pytest.fixture
def codec_cfg(config, vocab):
    return replace(config.codec, vocab_size=vocab.size)


def test_bitwriter_fixed_and_varint_fields():
    writer = BitWriter()
    writer.write_bits(5, 3)
    writer.write_varint(300)
    writer.write_f64(1.25)
    writer.write_bit(1)
    reader = BitReader(writer.to_bytes(), len(writer))
    assert reader.read_bits(3) == 5
    assert reader.read_varint() == 300
    assert reader.read_f64() == 1.25
    assert reader.read_bit() == 1
    with pytest.raises(CorruptPayloadError):
        reader.read_bit()


def test_bitwriter_rejects_overflow():
    with pytest.raises(ValueError):
        BitWriter().write_bits(8, 3)
    with pytest.raises(ValueError):
        BitWriter().write_varint(-1)


def test_to_bytes_pads_with_zeros():
    writer = BitWriter()
    writer.extend([1, 0, 1])
    assert writer.to_bytes() == bytes([0b10100000])


@pytest.mark.parametrize("p0", [0.5, 0.9, 0.99])
def test_arithmetic_coder_is_lossless_and_near_entropy(p0):
    rng = np.random.default_rng(1)
    bits = (rng.random(4000) > p0).astype(int).tolist()
    q = int(round(p0 * 65536))
    encoder = BinaryArithmeticEncoder(q)
    encoder.encode_all(bits)
    coded = encoder.finish()

    writer = BitWriter()
    writer.extend(coded)
    decoder = BinaryArithmeticDecoder(BitReader(writer.to_bytes(), len(coded)), q)
    assert decoder.decode_many(len(bits)) == bits

    ones = sum(bits)
    ideal = -(len(bits) - ones) * math.log2(p0) - ones * math.log2(1 - p0)
    assert len(coded) <= ideal + 16


def test_arithmetic_coder_rejects_bad_probability():
    with pytest.raises(ValueError):
        BinaryArithmeticEncoder(0)
    with pytest.raises(ValueError):
        BinaryArithmeticEncoder(1 << 16)


def test_field_width():
    assert field_width(1) == 0
    assert field_width(2) == 1
    assert field_width(8) == 3
    assert field_width(752) == 10


def test_geometry_levels_and_quantization(geom):
    assert geom.width(0) == 752 and geom.height(0) == 480
    assert geom.width(1) == 626 and geom.height(1) == 400
    level, u, v = geom.quantize(Keypoint(100.4, 50.6, 1))
    assert (level, u, v) == (1, 84, 42)
    assert geom.dequantize(1, 84, 42) == pytest.approx((100.8, 50.4))


def test_decide_mode(config):
    cfg = config.codec
    assert decide_mode(100, 0.1, cfg) == FrameMode.NON_KEYFRAME
    assert decide_mode(cfg.kf_min_tracked - 1, 0.1, cfg) == FrameMode.KEYFRAME
    assert decide_mode(100, cfg.kf_max_interval + 0.01, cfg) == FrameMode.KEYFRAME
    with pytest.raises(ValueError):
        decide_mode(100, -0.1, cfg)
    assert decide_mode(100, 0.1, replace(cfg, forced_keyframes=True)) == FrameMode.KEYFRAME


def test_cost_formulas(config, geom):
    cfg = config.codec
    kp = Keypoint(10.0, 10.0, 0, 3)
    base = math.log2(8) + math.log2(480) + math.log2(752)
    assert keypoint_cost(kp, FrameMode.NON_KEYFRAME, geom, cfg) == pytest.approx(base)
    assert keypoint_cost(kp, FrameMode.KEYFRAME, geom, cfg) == pytest.approx(base + 5.0)
    assert word_cost(65536) == 16.0
    assert residual_cost(0, 256, 0.5) == pytest.approx(256.0)
    assert residual_cost(10, 256, 0.9) == pytest.approx(-246 * math.log2(0.9) - 10 * math.log2(0.1))
    with pytest.raises(ValueError):
        residual_cost(300, 256, 0.9)


def test_non_keyframe_is_cheaper_than_keyframe(config, vocab, geom, codec_cfg):
    frame = synthetic_frame(config, vocab, 150, seed=2)
    kf = frame_cost(frame, FrameMode.KEYFRAME, vocab, geom, codec_cfg)
    nonkf = frame_cost(frame, FrameMode.NON_KEYFRAME, vocab, geom, codec_cfg)
    assert nonkf.bow_bits == 0 and nonkf.res_bits == 0
    assert nonkf.total_ideal_bits / 150 < 27.0
    assert kf.total_ideal_bits > nonkf.total_ideal_bits


def test_keyframe_round_trip(config, vocab, geom, codec_cfg):
    frame = replace(synthetic_frame(config, vocab, 120, seed=3), frame_id=42, timestamp=3.5)
    enc = encode_frame(frame, FrameMode.KEYFRAME, vocab, geom, codec_cfg)
    decoded = decode_frame(enc, vocab, geom, codec_cfg)
    assert frames_equal(decoded, quantize_frame(frame, FrameMode.KEYFRAME, geom))
    assert np.array_equal(decoded.descriptors, frame.descriptors)
    assert len(decoded.words) == 120
    assert peek_mode(enc.payload) == FrameMode.KEYFRAME
    assert enc.cost_report.actual_bits == enc.payload_bits


def test_actual_bits_track_ideal_bits(config, vocab, geom, codec_cfg):
    frame = synthetic_frame(config, vocab, 150, seed=4)
    report = encode_frame(frame, FrameMode.KEYFRAME, vocab, geom, codec_cfg).cost_report
    assert report.body_bits >= report.total_ideal_bits - 1
    assert report.body_bits <= report.total_ideal_bits + 2 * 150 + 64
    assert report.actual_bits == pytest.approx(report.header_bits + report.side_bits + report.body_bits, abs=7)


def test_non_keyframe_round_trip_with_track_bitmap(config, vocab, geom, codec_cfg):
    base = synthetic_frame(config, vocab, 40, seed=5)
    tracked = np.zeros(60, dtype=bool)
    tracked[::3] = True
    tracked[1] = True
    keypoints = base.keypoints[: int(tracked.sum())]
    frame = FeatureFrame(7, 0.35, keypoints, ref_frame_id=6, tracked=tracked)
    enc = encode_frame(frame, FrameMode.NON_KEYFRAME, vocab, geom, codec_cfg)
    decoded = decode_frame(enc.payload, vocab, geom, codec_cfg)
    assert frames_equal(decoded, quantize_frame(frame, FrameMode.NON_KEYFRAME, geom))
    assert decoded.descriptors is None
    assert enc.cost_report.side_bits == 60
    assert peek_mode(enc.payload) == FrameMode.NON_KEYFRAME


def test_empty_frames_round_trip(vocab, geom, codec_cfg):
    for mode in FrameMode:
        frame = FeatureFrame(1, 0.0, (), np.zeros((0, 32), dtype=np.uint8) if mode == FrameMode.KEYFRAME else None)
        decoded = decode_frame(encode_frame(frame, mode, vocab, geom, codec_cfg), vocab, geom, codec_cfg)
        assert decoded.n_features == 0


def test_fingerprint_mismatch(config, vocab, geom, codec_cfg):
    frame = synthetic_frame(config, vocab, 10, seed=6)
    enc = encode_frame(frame, FrameMode.KEYFRAME, vocab, geom, codec_cfg)
    with pytest.raises(ConfigMismatchError):
        decode_frame(enc, vocab, geom, replace(codec_cfg, p0_kf=0.8))
    other = Vocabulary(np.roll(vocab.words, 1, axis=0))
    with pytest.raises(ConfigMismatchError):
        decode_frame(enc, other, geom, codec_cfg)


def test_truncated_and_padded_payloads(config, vocab, geom, codec_cfg):
    frame = synthetic_frame(config, vocab, 20, seed=7)
    payload = encode_frame(frame, FrameMode.KEYFRAME, vocab, geom, codec_cfg).payload
    with pytest.raises(CorruptPayloadError):
        decode_frame(payload[:-3], vocab, geom, codec_cfg)
    with pytest.raises(CorruptPayloadError):
        decode_frame(payload + b"\x00", vocab, geom, codec_cfg)
    with pytest.raises(CorruptPayloadError):
        peek_mode(b"")


def test_keyframe_requires_descriptors(config, vocab, geom, codec_cfg):
    frame = FeatureFrame(0, 0.0, (Keypoint(1.0, 1.0, 0, 0),))
    with pytest.raises(MissingDescriptorError):
        encode_frame(frame, FrameMode.KEYFRAME, vocab, geom, codec_cfg)
    no_theta = FeatureFrame(0, 0.0, (Keypoint(1.0, 1.0, 0),), np.zeros((1, 32), dtype=np.uint8))
    with pytest.raises(MissingDescriptorError):
        encode_frame(no_theta, FrameMode.KEYFRAME, vocab, geom, codec_cfg)


def test_estimate_p0_tracks_flip_rate(config, vocab):
    rng = np.random.default_rng(0)
    descs = flip_bits(vocab.words[rng.integers(0, vocab.size, 2000)], 0.05, rng)
    assert estimate_p0(descs, vocab) == pytest.approx(0.95, abs=0.01)
    with pytest.raises(MissingDescriptorError):
        estimate_p0(None, vocab)


def test_cost_log_bits_per_feature(tmp_path, config, vocab, geom, codec_cfg):
    log = CostLog()
    frame = synthetic_frame(config, vocab, 50, seed=8)
    for mode in FrameMode:
        log.add(encode_frame(frame, mode, vocab, geom, codec_cfg).cost_report)
    assert log.bits_per_feature(FrameMode.NON_KEYFRAME) < log.bits_per_feature(FrameMode.KEYFRAME)
    log.write_csv(tmp_path / "costs.csv")
    lines = (tmp_path / "costs.csv").read_text().splitlines()
    assert lines[0].startswith("frame_id,mode")
    assert len(lines) == 3


def test_vocabulary_lookup_and_file_format(tmp_path, vocab):
    idx, residual, h = vocab.lookup(vocab.words[17])
    assert idx == 17 and h == 0 and not residual.any()
    path = tmp_path / "vocab.bin"
    vocab.save(path)
    loaded = Vocabulary.load(path)
    assert loaded.fingerprint == vocab.fingerprint
    data = bytearray(path.read_bytes())
    data[10] ^= 0xFF
    with pytest.raises(VocabularyFormatError):
        Vocabulary.from_bytes(bytes(data))
    with pytest.raises(VocabularyFormatError):
        Vocabulary.from_bytes(b"NOPE" + bytes(20))


def test_bitwise_majority_ties_to_zero():
    descs = np.array([[0b0011], [0b0101]], dtype=np.uint8)
    assert bitwise_majority(descs).tolist() == [0b0001]


def test_train_vocabulary_is_deterministic_and_distinct():
    rng = np.random.default_rng(3)
    prototypes = rng.integers(0, 256, size=(64, 32), dtype=np.uint8)
    training = flip_bits(prototypes[rng.integers(0, 64, 3000)], 0.05, rng)
    a = train_vocabulary(training, 64, seed=1)
    b = train_vocabulary(training, 64, seed=1)
    assert a.size == 64
    assert np.array_equal(a.words, b.words)
    assert len({w.tobytes() for w in a.words}) == 64
    _, _, h = a.lookup_many(training)
    assert h.mean() < 80


def test_train_vocabulary_needs_enough_descriptors():
    with pytest.raises(InsufficientDataError):
        train_vocabulary(np.zeros((10, 32), dtype=np.uint8), 20)


def test_keyframe_bits_per_feature_near_217_with_a_65536_word_vocabulary(config):
    # residuals of about 46 of 256 bits are what a 217-bit keyframe feature implies
    rng = np.random.default_rng(21)
    vocab = Vocabulary(rng.integers(0, 256, size=(1 << 16, 32), dtype=np.uint8))
    config.scenario.descriptor_flip_prob = 0.18
    calibration = flip_bits(vocab.words[rng.integers(0, vocab.size, 600)], 0.18, rng)
    p0 = estimate_p0(calibration, vocab)
    assert p0 == pytest.approx(0.82, abs=0.01)

    cfg = replace(config.codec, vocab_size=vocab.size, p0_kf=p0)
    geom = PyramidGeometry.from_config(cfg)
    reports = [
        encode_frame(synthetic_frame(config, vocab, 150, seed=s), FrameMode.KEYFRAME, vocab, geom, cfg).cost_report
        for s in range(4)
    ]
    actual = sum(r.actual_bits for r in reports) / (150 * len(reports))
    assert actual == pytest.approx(217.0, rel=0.15)
    assert word_cost(vocab.size) == 16.0


def test_frames_decode_independently_of_history(config, vocab, geom, codec_cfg):
    frames = [replace(synthetic_frame(config, vocab, 30, seed=s), frame_id=s, timestamp=0.05 * s) for s in range(6)]
    modes = [FrameMode.KEYFRAME if s % 3 == 0 else FrameMode.NON_KEYFRAME for s in range(6)]
    payloads = [encode_frame(f, m, vocab, geom, codec_cfg).payload for f, m in zip(frames, modes)]
    alone = [encode_frame(frames[s], modes[s], vocab, geom, codec_cfg).payload for s in reversed(range(6))]
    assert alone[::-1] == payloads

    in_order = [decode_frame(p, vocab, geom, codec_cfg) for p in payloads]
    with pytest.raises(CorruptPayloadError):
        decode_frame(payloads[0][:-3], vocab, geom, codec_cfg)
    for s in np.random.default_rng(0).permutation(6):
        decoded = decode_frame(payloads[s], vocab, geom, codec_cfg)
        assert frames_equal(decoded, in_order[s])
        assert frames_equal(decoded, quantize_frame(frames[s], modes[s], geom))
