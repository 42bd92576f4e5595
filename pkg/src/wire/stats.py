"""Link accounting: byte counters, 1 s rate buckets and the session CSV log."""

import csv
import threading
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

from wire.message import Message


class LinkStats:
    """Counters for one link direction. Updates are serialized by a lock."""

    def __init__(self, bucket: float = 1.0):
        self.bucket = bucket
        self.bytes_sent = 0
        self.bytes_acked = 0
        self.payload_bits = 0
        self.retx_payload_bits = 0
        self.messages_sent = 0
        self.retransmissions = 0
        self.delivered = 0
        self.duplicates = 0
        self.overflows = 0
        self._buckets: dict[int, int] = defaultdict(int)
        self._by_type: dict[str, int] = defaultdict(int)
        self._lock = threading.Lock()

    def record_sent(self, t: float, msg: Message, retransmission: bool = False) -> None:
        bits = 8 * len(msg.payload)
        with self._lock:
            self.bytes_sent += msg.wire_size
            self.payload_bits += bits
            self.messages_sent += 1
            self._buckets[int(t // self.bucket)] += bits
            self._by_type[msg.msg_type.name] += bits
            if retransmission:
                self.retransmissions += 1
                self.retx_payload_bits += bits

    def record_acked(self, wire_bytes: int) -> None:
        with self._lock:
            self.bytes_acked += wire_bytes

    def record_delivered(self, duplicate: bool = False) -> None:
        with self._lock:
            if duplicate:
                self.duplicates += 1
            else:
                self.delivered += 1

    def record_overflow(self) -> None:
        with self._lock:
            self.overflows += 1

    def rate_series(self) -> list[tuple[float, float]]:
        """(bucket start, kbit/s) for every bucket that saw traffic."""
        with self._lock:
            items = sorted(self._buckets.items())
        return [(k * self.bucket, bits / self.bucket / 1000.0) for k, bits in items]

    def bits_by_type(self) -> dict[str, int]:
        with self._lock:
            return dict(self._by_type)

    def merge(self, other: "LinkStats") -> None:
        with self._lock:
            self.bytes_sent += other.bytes_sent
            self.bytes_acked += other.bytes_acked
            self.payload_bits += other.payload_bits
            self.retx_payload_bits += other.retx_payload_bits
            self.messages_sent += other.messages_sent
            self.retransmissions += other.retransmissions
            self.delivered += other.delivered
            self.duplicates += other.duplicates
            for k, v in other._buckets.items():
                self._buckets[k] += v
            for k, v in other._by_type.items():
                self._by_type[k] += v


def bandwidth_report(stats: LinkStats, interval: float, include_retransmissions: bool = True) -> float:
    """Average application-payload rate in kbit/s over `interval` seconds."""
    if interval <= 0:
        raise ValueError(f"interval must be > 0, got {interval}")
    bits = stats.payload_bits
    if not include_retransmissions:
        bits -= stats.retx_payload_bits
    return bits / interval / 1000.0


@dataclass(frozen=True)
class LogRow:
    t: float
    direction: str
    msg_type: str
    size: int
    retx: int


class SessionLog:
    """One CSV row per frame put on or taken off the wire."""

    FIELDS = ("t", "dir", "type", "bytes", "retx")

    def __init__(self):
        self.rows: list[LogRow] = []
        self._lock = threading.Lock()

    def record(self, t: float, direction: str, msg: Message, retx: int = 0) -> None:
        with self._lock:
            self.rows.append(LogRow(t, direction, msg.msg_type.name, msg.wire_size, retx))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(self.FIELDS)
            for row in self.rows:
                writer.writerow([f"{row.t:.6f}", row.direction, row.msg_type, row.size, row.retx])
