import asyncio
from dataclasses import replace

import numpy as np
import pytest

from codec.frame_codec import decode_frame, encode_frame, frames_equal, quantize_frame
from codec.geometry import PyramidGeometry
from config import FrameMode, LinkConfig
from geometry.pose import Pose
from geometry.so3 import so3_exp
from harness.codec_io import synthetic_frame
from imu.types import ImuBias, ImuSample, NavState
from wire.errors import (
    BadMagicError,
    BadVersionError,
    CrcMismatchError,
    DeliveryAbandonedError,
    FrameParseError,
    OversizePayloadError,
    PayloadFormatError,
    QueueFullError,
    SessionClosedError,
    TruncatedFrameError,
)
from wire.message import HEADER, Message, MessageType, StreamParser, frame_message, parse_message
from wire.payloads import (
    Ack,
    ImuBatch,
    InertialParams,
    KeyframeRecord,
    MapPointUpdate,
    PoseCorrection,
    SessionSetup,
)
from wire.session import ReliableSession
from wire.sim_transport import SimNetwork
from wire.stats import LinkStats, SessionLog, bandwidth_report
from wire.tcp_transport import TcpNetwork, open_link, serve_links


def sample_message(seq=1, payload=b"hello edge") -> Message:
    return Message(MessageType.KEYFRAME, robot_id=3, seq=seq, payload=payload)


def test_frame_round_trip():
    msg = sample_message()
    data = frame_message(msg)
    assert len(data) == msg.wire_size
    assert parse_message(data) == msg


def test_parse_rejects_corruption():
    data = bytearray(frame_message(sample_message()))
    with pytest.raises(BadMagicError):
        parse_message(b"\x00" + bytes(data[1:]))

    bad_version = bytearray(data)
    bad_version[4] = 9
    with pytest.raises(BadVersionError):
        parse_message(bytes(bad_version))

    flipped = bytearray(data)
    flipped[HEADER.size] ^= 0x01
    with pytest.raises(CrcMismatchError) as exc:
        parse_message(bytes(flipped))
    assert exc.value.offset == len(data) - 4

    with pytest.raises(TruncatedFrameError):
        parse_message(bytes(data[:-1]))
    with pytest.raises(FrameParseError):
        parse_message(bytes(data) + b"\x00")


def test_oversize_payload():
    with pytest.raises(OversizePayloadError):
        frame_message(sample_message(payload=bytes(100)), max_payload=10)


def test_stream_parser_any_chunking():
    messages = [sample_message(seq=i, payload=bytes([i]) * i) for i in range(1, 8)]
    stream = b"".join(frame_message(m) for m in messages)
    for chunk in (1, 3, 7, 64, len(stream)):
        parser = StreamParser()
        out = []
        for start in range(0, len(stream), chunk):
            out.extend(parser.feed(stream[start : start + chunk]))
        parser.close()
        assert out == messages


def test_stream_parser_reports_partial_frame_and_offset():
    first = frame_message(sample_message(seq=1))
    parser = StreamParser()
    parser.feed(first + first[:5])
    with pytest.raises(TruncatedFrameError):
        parser.close()

    parser = StreamParser()
    with pytest.raises(BadMagicError) as exc:
        parser.feed(first + b"JUNKJUNKJUNKJUNKJUNK")
    assert exc.value.offset == len(first)


def test_simple_payload_round_trips():
    setup = SessionSetup(0xDEADBEEF, 0.87, 1234)
    assert SessionSetup.from_bytes(setup.to_bytes()) == setup
    ack = Ack(int(MessageType.KEYFRAME), 17)
    assert Ack.from_bytes(ack.to_bytes()) == ack
    with pytest.raises(PayloadFormatError):
        Ack.from_bytes(b"\x00")


def test_imu_and_point_payloads():
    samples = [ImuSample(0.005 * k, [0.1, 0.2, 0.3], [0.0, 0.0, 9.81]) for k in range(4)]
    batch = ImuBatch.from_bytes(ImuBatch(samples).to_bytes())
    assert [s.timestamp for s in batch.samples] == [s.timestamp for s in samples]
    assert np.allclose(batch.samples[2].accel, [0.0, 0.0, 9.81])

    update = MapPointUpdate({5: np.array([1.0, 2.0, 3.0]), -1 << 40: np.zeros(3)})
    decoded = MapPointUpdate.from_bytes(update.to_bytes())
    assert set(decoded.points) == {5, -1 << 40}
    with pytest.raises(PayloadFormatError):
        MapPointUpdate.from_bytes(update.to_bytes() + b"\x00")


def test_inertial_params_round_trip():
    params = InertialParams(
        kf_id=9,
        bias=ImuBias([0.01, 0.02, 0.03], [0.1, 0.2, 0.3]),
        gravity=np.array([0.0, 0.0, -9.81]),
        scale=1.0,
        rotation=so3_exp(np.array([0.1, 0.0, 0.0])),
        velocity=np.array([0.5, 0.0, 0.0]),
    )
    decoded = InertialParams.from_bytes(params.to_bytes())
    assert decoded.kf_id == 9
    assert np.allclose(decoded.bias.as_vector(), params.bias.as_vector())
    assert np.allclose(decoded.rotation, params.rotation)


def test_keyframe_record_round_trip():
    rng = np.random.default_rng(0)
    n = 5
    state = NavState(so3_exp(np.array([0.0, 0.3, 0.0])), [1.0, 2.0, 3.0], [0.1, 0.0, 0.0], ImuBias([0.001] * 3, [0.01] * 3))
    record = KeyframeRecord(
        kf_id=12,
        timestamp=4.25,
        state=state,
        keypoints=rng.uniform(0, 400, size=(n, 2)),
        levels=np.arange(n),
        descriptors=rng.integers(0, 256, size=(n, 32), dtype=np.uint8),
        words=np.array([1, 2, 3, 4, 5]),
        point_ids=np.array([10, -1, 11, -1, 12]),
        points={10: np.ones(3), 11: np.zeros(3), 12: np.full(3, 2.0)},
        imu=[ImuSample(4.2, [0, 0, 0], [0, 0, 9.81])],
    )
    decoded = KeyframeRecord.from_bytes(record.to_bytes())
    assert decoded.kf_id == 12 and decoded.timestamp == 4.25
    assert np.allclose(decoded.state.position, state.position)
    assert np.allclose(decoded.state.bias.accel, 0.01)
    assert np.array_equal(decoded.descriptors, record.descriptors)
    assert decoded.point_ids.tolist() == [10, -1, 11, -1, 12]
    assert set(decoded.points) == {10, 11, 12}
    assert len(decoded.imu) == 1
    with pytest.raises(PayloadFormatError):
        KeyframeRecord.from_bytes(record.to_bytes()[:-3])


def test_pose_correction_round_trip():
    poses = {3: Pose(so3_exp(np.array([0.0, 0.0, 0.2])), [1.0, 0.0, 0.0]), 1: Pose.identity()}
    decoded = PoseCorrection.from_bytes(PoseCorrection(poses).to_bytes())
    assert sorted(decoded.poses) == [1, 3]
    assert decoded.poses[3].allclose(poses[3])


def test_session_requires_setup_and_rejects_manual_acks():
    session = ReliableSession(LinkConfig(), "robot0")
    with pytest.raises(SessionClosedError):
        session.send(MessageType.KEYFRAME, b"x", 0)
    session.send(MessageType.SESSION_SETUP, b"", 0)
    with pytest.raises(ValueError):
        session.send(MessageType.KEYFRAME_ACK, b"", 0)
    session.close()
    with pytest.raises(SessionClosedError):
        session.send(MessageType.KEYFRAME, b"x", 0)


def test_session_queue_limit():
    session = ReliableSession(LinkConfig(max_queue=2), "robot0")
    session.send(MessageType.SESSION_SETUP, b"", 0)
    session.send(MessageType.KEYFRAME, b"a", 0)
    assert not session.can_send()
    with pytest.raises(QueueFullError):
        session.send(MessageType.KEYFRAME, b"b", 0)


def test_reorder_window_drops_messages_past_the_queue_bound():
    session = ReliableSession(LinkConfig(max_queue=4), "edge0")

    def keyframe(seq):
        return Message(MessageType.KEYFRAME, 0, seq, seq.to_bytes(2, "little"))

    for seq in (2, 3, 4):
        assert session.on_receive(keyframe(seq)) == []
    assert session.on_receive(keyframe(5)) == []
    assert session.rx_stats.overflows == 1
    assert session.rx_stats.delivered == 3
    assert session.idle

    ready = session.on_receive(keyframe(1))
    assert [m.seq for m in ready] == [1, 2, 3, 4]
    (ack,) = session.poll(0.0)
    assert Ack.from_bytes(ack.payload).seq == 4
    assert [m.seq for m in session.on_receive(keyframe(5))] == [5]
    assert session.rx_stats.overflows == 1


def run_exchange(cfg: LinkConfig, count: int = 40) -> tuple[list[Message], ReliableSession]:
    net = SimNetwork(cfg, SessionLog())
    robot, edge = net.connect("robot0", "edge0")
    robot.send(MessageType.SESSION_SETUP, SessionSetup(1, 0.9, 2).to_bytes(), 0)
    received = []
    for k in range(count):
        msg_type = MessageType.KEYFRAME if k % 4 == 0 else MessageType.NON_KEYFRAME
        robot.send(msg_type, k.to_bytes(2, "little"), 0)
        net.run_until(net.now + 0.05)
        received.extend(edge.receive())
    assert net.settle(60.0)
    received.extend(edge.receive())
    return received, robot.session


def payload_order(messages, msg_type):
    return [int.from_bytes(m.payload, "little") for m in messages if m.msg_type == msg_type]


def test_lossless_link_delivers_in_order():
    received, robot = run_exchange(LinkConfig())
    assert received[0].msg_type == MessageType.SESSION_SETUP
    assert payload_order(received, MessageType.KEYFRAME) == list(range(0, 40, 4))
    assert len(received) == 41
    assert robot.stats.retransmissions == 0
    assert robot.idle


def test_lossy_link_delivers_exactly_once_in_order():
    cfg = LinkConfig(drop_rate=0.2, duplicate_rate=0.2, jitter=0.08, seed=3)
    received, robot = run_exchange(cfg)
    assert len(received) == 41
    assert payload_order(received, MessageType.KEYFRAME) == list(range(0, 40, 4))
    assert payload_order(received, MessageType.NON_KEYFRAME) == [k for k in range(40) if k % 4]
    assert robot.stats.retransmissions > 0
    assert robot.stats.retx_payload_bits > 0


def test_link_is_deterministic_given_seed():
    cfg = LinkConfig(drop_rate=0.2, jitter=0.02, seed=11)
    _, a = run_exchange(cfg, 20)
    _, b = run_exchange(cfg, 20)
    assert a.stats.retransmissions == b.stats.retransmissions
    assert a.stats.payload_bits == b.stats.payload_bits


def test_dead_link_abandons_delivery():
    cfg = LinkConfig(drop_rate=0.999, max_retries=2, ack_timeout=0.05, seed=1)
    net = SimNetwork(cfg)
    robot, _ = net.connect("robot0", "edge0")
    robot.send(MessageType.SESSION_SETUP, b"", 0)
    with pytest.raises(DeliveryAbandonedError):
        net.run_until(10.0)
    assert robot.session.closed


def test_bandwidth_report():
    stats = LinkStats()
    stats.record_sent(0.1, sample_message(payload=bytes(125)))
    stats.record_sent(1.5, sample_message(payload=bytes(125)), retransmission=True)
    assert bandwidth_report(stats, 2.0) == pytest.approx(1.0)
    assert bandwidth_report(stats, 2.0, include_retransmissions=False) == pytest.approx(0.5)
    assert stats.rate_series() == [(0.0, 1.0), (1.0, 1.0)]
    assert stats.bits_by_type() == {"KEYFRAME": 2000}
    with pytest.raises(ValueError):
        bandwidth_report(stats, 0.0)


def test_session_log_csv(tmp_path):
    _, robot = run_exchange(LinkConfig(), 4)
    log = robot.log
    log.write_csv(tmp_path / "link.csv")
    lines = (tmp_path / "link.csv").read_text().splitlines()
    assert lines[0] == "t,dir,type,bytes,retx"
    assert any(",rx,KEYFRAME_ACK," in line for line in lines)


def test_tcp_network_carries_messages():
    cfg = replace(LinkConfig(), ack_timeout=0.5)
    net = TcpNetwork(cfg, SessionLog())
    try:
        robot, edge = net.connect("robot0", "edge0")
        robot.send(MessageType.SESSION_SETUP, b"", 0)
        for k in range(5):
            robot.send(MessageType.NON_KEYFRAME, bytes([k]), 0)
        assert net.settle(5.0)
        received = edge.receive()
        assert [m.msg_type for m in received][0] == MessageType.SESSION_SETUP
        assert [m.payload for m in received[1:]] == [bytes([k]) for k in range(5)]
    finally:
        net.close()


@pytest.mark.asyncio
async def test_tcp_links_on_running_loop():
    cfg = LinkConfig()
    accepted = asyncio.get_running_loop().create_future()
    server = await serve_links("127.0.0.1", 0, cfg, "edge", accepted.set_result)
    port = server.sockets[0].getsockname()[1]
    client = await open_link("127.0.0.1", port, cfg, "robot0")
    edge = await asyncio.wait_for(accepted, 5.0)
    try:
        client.send(MessageType.SESSION_SETUP, SessionSetup(7, 0.9, 8).to_bytes(), 1)
        received = []
        for _ in range(200):
            received.extend(edge.receive())
            if received and client.idle:
                break
            await asyncio.sleep(0.01)
        assert SessionSetup.from_bytes(received[0].payload).fingerprint == 7
        assert received[0].robot_id == 1
    finally:
        await client.aclose()
        await edge.aclose()
        server.close()
        await server.wait_closed()


@pytest.mark.slow
def test_ten_thousand_encoded_frames_cross_a_lossy_link(config, vocab):
    codec_cfg = replace(config.codec, vocab_size=vocab.size)
    geom = PyramidGeometry.from_config(codec_cfg)
    net = SimNetwork(LinkConfig(drop_rate=0.2, duplicate_rate=0.05, jitter=0.08, seed=5))
    robot, edge = net.connect("robot0", "edge0")
    setup = SessionSetup(codec_cfg.fingerprint(vocab.fingerprint), 0.9, vocab.fingerprint)
    robot.send(MessageType.SESSION_SETUP, setup.to_bytes(), 0)

    expected = {}
    received = []
    for k in range(10_000):
        mode = FrameMode.KEYFRAME if k % 10 == 0 else FrameMode.NON_KEYFRAME
        frame = replace(synthetic_frame(config, vocab, 6 if k % 10 == 0 else 20, seed=k), frame_id=k, timestamp=k / 20)
        encoded = encode_frame(frame, mode, vocab, geom, codec_cfg)
        expected[k] = quantize_frame(frame, mode, geom)
        msg_type = MessageType.KEYFRAME if mode == FrameMode.KEYFRAME else MessageType.NON_KEYFRAME
        robot.send(msg_type, encoded.payload, 0)
        net.run_until(net.now + 0.05)
        received.extend(edge.receive())
    assert net.settle(120.0)
    received.extend(edge.receive())

    frames = [m for m in received if m.msg_type in (MessageType.KEYFRAME, MessageType.NON_KEYFRAME)]
    assert len(frames) == 10_000
    decoded = [decode_frame(m.payload, vocab, geom, codec_cfg) for m in frames]
    assert sorted(f.frame_id for f in decoded) == list(range(10_000))
    assert all(frames_equal(f, expected[f.frame_id]) for f in decoded)
    stats = robot.session.stats
    assert stats.retransmissions > 0
    assert edge.session.rx_stats.duplicates > 0
