"""UDP event streaming.

Packet layout (little-endian): magic ``EVU1``, u32 sequence number, u16
record count (at most 512), then that many 16-byte EVB1 records. A packet
with zero records marks the end of the stream; its sequence number is one
past the last data packet.
"""

from __future__ import annotations

import logging
import socket
import struct
import time
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from evbias.events import RateEstimator, empty_stream
from evbias.io.files import RECORD_DTYPE, from_records, to_records

logger = logging.getLogger(__name__)

UDP_MAGIC = b"EVU1"
PACKET_HEADER = struct.Struct("<4sIH")
MAX_EVENTS_PER_PACKET = 512
REORDER_WINDOW = 64


class MalformedPacket(ValueError):
    pass


def encode_packet(seq: int, stream: np.ndarray) -> bytes:
    if stream.size > MAX_EVENTS_PER_PACKET:
        raise ValueError(f"at most {MAX_EVENTS_PER_PACKET} events per packet")
    return PACKET_HEADER.pack(UDP_MAGIC, seq, stream.size) + to_records(stream).tobytes()


def decode_packet(data: bytes) -> tuple[int, np.ndarray]:
    if len(data) < PACKET_HEADER.size:
        raise MalformedPacket(f"packet of {len(data)} bytes is shorter than the header")
    magic, seq, count = PACKET_HEADER.unpack_from(data)
    if magic != UDP_MAGIC:
        raise MalformedPacket(f"bad magic {magic!r}")
    if count > MAX_EVENTS_PER_PACKET:
        raise MalformedPacket(f"count {count} exceeds {MAX_EVENTS_PER_PACKET}")
    if len(data) != PACKET_HEADER.size + RECORD_DTYPE.itemsize * count:
        raise MalformedPacket(f"length {len(data)} does not match count {count}")
    rec = np.frombuffer(data, dtype=RECORD_DTYPE, count=count, offset=PACKET_HEADER.size)
    try:
        return seq, from_records(rec)
    except ValueError as exc:
        raise MalformedPacket(str(exc)) from None


def packetize(stream: np.ndarray, per_packet: int = MAX_EVENTS_PER_PACKET) -> Iterator[bytes]:
    """Data packets for ``stream`` followed by the end marker."""
    seq = 0
    for i in range(0, stream.size, per_packet):
        yield encode_packet(seq, stream[i:i + per_packet])
        seq += 1
    yield encode_packet(seq, empty_stream())


def parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"expected host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def udp_send(stream: np.ndarray, endpoint: tuple[str, int],
             drop: Callable[[int], bool] | None = None,
             packets_per_second: float | None = 5_000.0, end_repeats: int = 3) -> list[int]:
    """Send ``stream`` as numbered packets; returns the sequence numbers dropped on purpose.

    ``drop(seq)`` injects loss by skipping data packets. Sending is paced to
    ``packets_per_second`` so the receiver socket does not overflow; the end
    marker is repeated ``end_repeats`` times.
    """
    dropped = []
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        gap = 1.0 / packets_per_second if packets_per_second else 0.0
        t_next = time.perf_counter()
        for pkt in packetize(stream):
            seq, count = struct.unpack_from("<IH", pkt, 4)
            if count == 0:
                for _ in range(end_repeats):
                    sock.sendto(pkt, endpoint)
                    time.sleep(0.005)
                break
            if drop is not None and drop(seq):
                dropped.append(seq)
                continue
            if gap:
                t_next += gap
                ahead = t_next - time.perf_counter()
                if ahead > 1e-3:
                    # sleeping rather than spinning lets an in-process receiver run
                    time.sleep(ahead)
            sock.sendto(pkt, endpoint)
    finally:
        sock.close()
    return dropped


@dataclass
class GapReport:
    missing: list[int] = field(default_factory=list)
    received: int = 0
    malformed: int = 0
    duplicates: int = 0
    late: int = 0
    end_seen: bool = False


class Reorderer:
    """Releases packets in sequence order, holding at most ``window`` out-of-order ones.

    A missing sequence number is declared lost once a packet ``window`` or
    more ahead of it arrives, or when the stream ends.
    """

    def __init__(self, window: int = REORDER_WINDOW):
        self.window = window
        self.next_seq = 0
        self.pending: dict[int, np.ndarray] = {}
        self.report = GapReport()

    def push(self, seq: int, events: np.ndarray) -> list[np.ndarray]:
        if seq < self.next_seq:
            self.report.late += 1
            return []
        if seq in self.pending:
            self.report.duplicates += 1
            return []
        self.report.received += 1
        self.pending[seq] = events
        out = []
        while self.pending and (self.next_seq in self.pending
                                or max(self.pending) - self.next_seq >= self.window):
            if self.next_seq in self.pending:
                out.append(self.pending.pop(self.next_seq))
            else:
                self.report.missing.append(self.next_seq)
            self.next_seq += 1
        return out

    def finish(self, end_seq: int | None = None) -> list[np.ndarray]:
        """Flush everything; sequence numbers below ``end_seq`` never seen count as lost."""
        last = end_seq if end_seq is not None else (max(self.pending) + 1 if self.pending else self.next_seq)
        out = []
        while self.next_seq < last:
            if self.next_seq in self.pending:
                out.append(self.pending.pop(self.next_seq))
            else:
                self.report.missing.append(self.next_seq)
            self.next_seq += 1
        return out


class UdpReceiver:
    """Receives an event stream, reorders it and feeds a rate estimator.

    Meant to run as the single ingest task: ``run()`` blocks until the end
    marker arrives or ``idle_timeout`` seconds pass without a packet.
    """

    def __init__(self, endpoint: tuple[str, int], window: int = REORDER_WINDOW,
                 estimator: RateEstimator | None = None, idle_timeout: float = 2.0,
                 on_events: Callable[[np.ndarray], None] | None = None):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 23)
        self.sock.bind(endpoint)
        self.sock.settimeout(idle_timeout)
        self.endpoint = self.sock.getsockname()
        self.reorder = Reorderer(window)
        self.estimator = estimator
        self.on_events = on_events
        self.chunks: list[np.ndarray] = []

    @property
    def report(self) -> GapReport:
        return self.reorder.report

    def _deliver(self, chunks: list[np.ndarray]) -> None:
        for c in chunks:
            if c.size == 0:
                continue
            if self.chunks and c["t"][0] < self.chunks[-1]["t"][-1]:
                logger.warning("packet timestamps go backwards; dropping %d events", c.size)
                continue
            self.chunks.append(c)
            if self.estimator is not None:
                self.estimator.push(c["t"])
            if self.on_events is not None:
                self.on_events(c)

    def run(self) -> np.ndarray:
        end_seq = None
        try:
            while True:
                try:
                    data = self.sock.recv(65536)
                except socket.timeout:
                    logger.warning("UDP receive timed out before the end marker")
                    break
                try:
                    seq, events = decode_packet(data)
                except MalformedPacket as exc:
                    self.report.malformed += 1
                    logger.debug("dropped malformed packet: %s", exc)
                    continue
                if events.size == 0:
                    end_seq = seq
                    self.report.end_seen = True
                    break
                self._deliver(self.reorder.push(seq, events))
        finally:
            self.sock.close()
        self._deliver(self.reorder.finish(end_seq))
        return np.concatenate(self.chunks) if self.chunks else empty_stream()
