import struct
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from exodyad import checks
from exodyad.transport import (
    FRAME_SIZE,
    Channel,
    ChannelModel,
    DecodeError,
    Loopback,
    Receiver,
    StateMessage,
    UdpEndpoint,
    decode,
    encode,
    timestamp_us,
)

ZERO_FRAME = bytes.fromhex("58324459" + "01" + "00" * 108 + "4dd49cf1")


def crc32_bitwise(data: bytes) -> int:
    crc = 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ (0xEDB88320 if crc & 1 else 0)
    return crc ^ 0xFFFFFFFF


def _msg(seq=1, t=0.0):
    return StateMessage(seq, timestamp_us(t), (0.1,) * 5, (0.0,) * 5, 0.86, 0.0)


def test_frame_layout():
    assert FRAME_SIZE == 117
    assert checks.GOLDEN_FRAME[:4] == b"X2DY"
    body = checks.GOLDEN_FRAME[:-4]
    fields = struct.unpack("<4sBIQ12d", body)
    assert fields[2:4] == (42, 1234567)
    assert fields[4:] == (0.1, -0.2, 0.3, -0.4, 0.5, 1.0, -1.5, 2.0, -2.5, 3.0, 0.85, -0.125)
    assert struct.unpack("<I", checks.GOLDEN_FRAME[-4:])[0] == crc32_bitwise(body)


@pytest.mark.parametrize(
    "msg, frame",
    [
        (StateMessage(0, 0, (0,) * 5, (0,) * 5, 0.0, 0.0), ZERO_FRAME),
        (checks.GOLDEN_MESSAGE, checks.GOLDEN_FRAME),
    ],
)
def test_golden_frames(msg, frame):
    assert encode(msg) == frame
    assert decode(frame) == msg
    assert crc32_bitwise(frame[:-4]) == int.from_bytes(frame[-4:], "little")


floats = st.floats(allow_nan=False, allow_infinity=False, width=64)


@given(
    st.integers(0, 2**32 - 1),
    st.integers(0, 2**64 - 1),
    st.lists(floats, min_size=12, max_size=12),
)
def test_round_trip(seq, ts, vals):
    m = StateMessage(seq, ts, vals[:5], vals[5:10], vals[10], vals[11])
    assert decode(encode(m)) == m


@given(st.integers(0, FRAME_SIZE - 1), st.integers(1, 255))
def test_corrupted_byte_rejected(i, x):
    bad = bytearray(checks.GOLDEN_FRAME)
    bad[i] ^= x
    with pytest.raises(DecodeError):
        decode(bytes(bad))


def test_codec_check_all_bit_flips():
    assert checks.check_codec().passed


def test_wrong_length_and_version():
    with pytest.raises(DecodeError) as e:
        decode(checks.GOLDEN_FRAME[:-1])
    assert e.value.check == "length"
    body = bytearray(checks.GOLDEN_FRAME[:-4])
    body[4] = 2
    frame = bytes(body) + struct.pack("<I", crc32_bitwise(bytes(body)))
    with pytest.raises(DecodeError) as e:
        decode(frame)
    assert e.value.check == "version"


def test_message_validation():
    with pytest.raises(ValueError):
        StateMessage(-1, 0, (0,) * 5, (0,) * 5, 0, 0)
    with pytest.raises(ValueError):
        StateMessage(0, 0, (0,) * 4, (0,) * 5, 0, 0)


def test_ideal_channel_delivers_same_tick():
    ch = Channel()
    for k in range(50):
        t = k * 0.002
        ch.send(encode(_msg(k + 1, t)), t)
        got = ch.poll(t)
        assert got.seq == k + 1
    assert ch.dropped == 0


def test_drop_everything():
    ch = Channel(ChannelModel(drop_probability=1.0))
    for k in range(100):
        ch.send(encode(_msg(k + 1)), 0.0)
    assert ch.poll(1.0) is None
    assert ch.dropped == 100


def test_latency_holds_frames():
    ch = Channel(ChannelModel(latency_mean=10.0))
    ch.send(encode(_msg(1, 0.0)), 0.0)
    assert ch.poll(0.009) is None
    assert ch.poll(0.010).seq == 1


def test_outage_window():
    ch = Channel(ChannelModel(outages=[(0.1, 0.2)]))
    for k in range(150):
        t = k * 0.002
        ch.send(encode(_msg(k + 1, t)), t)
        ch.poll(t)
    assert ch.dropped == 50
    with pytest.raises(ValueError):
        ChannelModel(outages=[(0.2, 0.1)])


def _arrivals(model):
    ch = Channel(model)
    out = []
    for k in range(500):
        t = k * 0.002
        ch.send(encode(_msg(k + 1, t)), t)
        m = ch.poll(t)
        out.append(None if m is None else m.seq)
    return out


def test_seeded_replay():
    m = ChannelModel(latency_mean=5.0, latency_jitter=3.0, drop_probability=0.2, seed=3)
    assert _arrivals(m) == _arrivals(m)
    assert _arrivals(m) != _arrivals(ChannelModel(latency_mean=5.0, latency_jitter=3.0, drop_probability=0.2, seed=4))


def test_receiver_discards_out_of_order():
    r = Receiver()
    assert r.accept(encode(_msg(5)))
    assert not r.accept(encode(_msg(3)))
    assert not r.accept(encode(_msg(5)))
    assert r.latest.seq == 5 and r.discarded == 2
    assert not r.accept(b"junk")
    assert r.rejected == 1


def test_jitter_never_delivers_out_of_order():
    ch = Channel(ChannelModel(latency_mean=2.0, latency_jitter=5.0, seed=1))
    seqs = []
    for k in range(1000):
        t = k * 0.002
        ch.send(encode(_msg(k + 1, t)), t)
        m = ch.poll(t)
        if m is not None:
            seqs.append(m.seq)
    assert np.all(np.diff(seqs) >= 0)
    assert ch.receiver.discarded > 0


def test_loopback_age():
    lb = Loopback()
    assert lb.receiver.age(0.0) == float("inf")
    lb.send(encode(_msg(1, 0.5)), 0.5)
    assert lb.poll(0.5).seq == 1
    assert lb.receiver.age(0.54) == pytest.approx(0.04)


def test_udp_loopback():
    a = UdpEndpoint()
    b = UdpEndpoint(peer=a.address)
    try:
        b.send(checks.GOLDEN_FRAME)
        deadline = time.monotonic() + 2.0
        got = None
        while got is None and time.monotonic() < deadline:
            got = a.poll()
            time.sleep(0.001)
        assert got == checks.GOLDEN_MESSAGE
        with pytest.raises(RuntimeError):
            a.send(checks.GOLDEN_FRAME)
    finally:
        a.close()
        b.close()
