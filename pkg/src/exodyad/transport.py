"""State exchange between the two controllers.

Wire frame (little endian, 117 bytes)::

    magic "X2DY" | version u8 | seq u32 | timestamp_us u64 | q 5*f64 | qdot 5*f64
    | z_com f64 | zdot_com f64 | crc32 u32 over everything before it
"""

from __future__ import annotations

import heapq
import socket
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"X2DY"
VERSION = 1
_BODY = struct.Struct("<4sBIQ5d5ddd")
_CRC = struct.Struct("<I")
FRAME_SIZE = _BODY.size + _CRC.size


class DecodeError(ValueError):
    def __init__(self, check: str, detail: str = ""):
        self.check = check
        super().__init__(f"{check}: {detail}" if detail else check)


@dataclass(frozen=True)
class StateMessage:
    seq: int
    timestamp_us: int
    q: tuple
    qdot: tuple
    z_com: float
    zdot_com: float

    def __post_init__(self):
        object.__setattr__(self, "q", tuple(float(v) for v in self.q))
        object.__setattr__(self, "qdot", tuple(float(v) for v in self.qdot))
        if len(self.q) != 5 or len(self.qdot) != 5:
            raise ValueError("q and qdot need 5 entries")
        if not (0 <= self.seq < 2**32 and 0 <= self.timestamp_us < 2**64):
            raise ValueError("seq or timestamp out of range")

    @property
    def time(self) -> float:
        return self.timestamp_us * 1e-6


def encode(msg: StateMessage) -> bytes:
    body = _BODY.pack(MAGIC, VERSION, msg.seq, msg.timestamp_us, *msg.q, *msg.qdot, msg.z_com, msg.zdot_com)
    return body + _CRC.pack(zlib.crc32(body))


def decode(buf: bytes) -> StateMessage:
    buf = bytes(buf)
    if len(buf) != FRAME_SIZE:
        raise DecodeError("length", f"expected {FRAME_SIZE} bytes, got {len(buf)}")
    body, (crc,) = buf[: _BODY.size], _CRC.unpack(buf[_BODY.size :])
    if zlib.crc32(body) != crc:
        raise DecodeError("crc")
    fields = _BODY.unpack(body)
    if fields[0] != MAGIC:
        raise DecodeError("magic", repr(fields[0]))
    if fields[1] != VERSION:
        raise DecodeError("version", str(fields[1]))
    return StateMessage(
        seq=fields[2],
        timestamp_us=fields[3],
        q=fields[4:9],
        qdot=fields[9:14],
        z_com=fields[14],
        zdot_com=fields[15],
    )


def timestamp_us(t: float) -> int:
    return int(round(t * 1e6))


# -- channels -----------------------------------------------------------------


@dataclass(frozen=True)
class ChannelModel:
    latency_mean: float = 0.0  # ms
    latency_jitter: float = 0.0  # ms, std of a Gaussian, arrivals never precede sends
    drop_probability: float = 0.0
    seed: int = 0
    outages: tuple = ()  # (start, end) windows in seconds where every frame is lost

    def __post_init__(self):
        object.__setattr__(self, "outages", tuple((float(a), float(b)) for a, b in self.outages))
        if any(b < a for a, b in self.outages):
            raise ValueError("outage windows need start <= end")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError("drop_probability must be in [0, 1]")
        if self.latency_mean < 0 or self.latency_jitter < 0:
            raise ValueError("latency terms must be >= 0")


class Receiver:
    """Keeps the newest accepted snapshot; older sequence numbers are discarded."""

    def __init__(self):
        self.latest: StateMessage | None = None
        self.accepted = 0
        self.discarded = 0
        self.rejected = 0

    def accept(self, frame: bytes) -> bool:
        try:
            msg = decode(frame)
        except DecodeError:
            self.rejected += 1
            return False
        if self.latest is not None and msg.seq <= self.latest.seq:
            self.discarded += 1
            return False
        self.latest = msg
        self.accepted += 1
        return True

    def age(self, now: float) -> float:
        return float("inf") if self.latest is None else now - self.latest.time


class Loopback:
    """In-process delivery: every frame arrives on the tick it was sent."""

    def __init__(self):
        self.receiver = Receiver()

    def send(self, frame: bytes, now: float):
        self.receiver.accept(frame)

    def poll(self, now: float) -> StateMessage | None:
        return self.receiver.latest


class Channel:
    """Simulated datagram link with seeded latency, jitter and loss."""

    def __init__(self, model: ChannelModel | None = None):
        self.model = model or ChannelModel()
        self.rng = np.random.default_rng(self.model.seed)
        self.pending: list = []
        self.receiver = Receiver()
        self.sent = 0
        self.dropped = 0
        self._order = 0

    def send(self, frame: bytes, now: float):
        self.sent += 1
        m = self.model
        # draw both numbers every time so the stream does not depend on outcomes
        u = self.rng.random()
        jitter = self.rng.standard_normal()
        if u < m.drop_probability or any(a <= now < b for a, b in m.outages):
            self.dropped += 1
            return
        delay = max(m.latency_mean + m.latency_jitter * jitter, 0.0) * 1e-3
        self._order += 1
        heapq.heappush(self.pending, (now + delay, self._order, frame))

    def poll(self, now: float) -> StateMessage | None:
        channel_step(self, now)
        return self.receiver.latest


def channel_step(channel: Channel, now: float) -> list[StateMessage]:
    """Deliver every pending frame whose arrival time has passed."""
    delivered = []
    while channel.pending and channel.pending[0][0] <= now + 1e-12:
        _, _, frame = heapq.heappop(channel.pending)
        if channel.receiver.accept(frame):
            delivered.append(channel.receiver.latest)
    return delivered


class UdpEndpoint:
    """Real datagram socket using the same frame layout (non-blocking receive)."""

    def __init__(self, bind=("127.0.0.1", 0), peer=None):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind(bind)
        self.sock.setblocking(False)
        self.peer = peer
        self.receiver = Receiver()

    @property
    def address(self):
        return self.sock.getsockname()

    def send(self, frame: bytes, now: float = 0.0):
        if self.peer is None:
            raise RuntimeError("no peer address configured")
        self.sock.sendto(frame, self.peer)

    def poll(self, now: float = 0.0) -> StateMessage | None:
        while True:
            try:
                data, _ = self.sock.recvfrom(2048)
            except (BlockingIOError, InterruptedError):
                break
            self.receiver.accept(data)
        return self.receiver.latest

    def close(self):
        self.sock.close()
