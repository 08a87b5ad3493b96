import math
import struct

import numpy as np
import pytest

from siqkd.bloch import X_AXIS, Z_AXIS, BlochVector, Observable
from siqkd.chsh import MeasurementSettings, chsh_with_intercept
from siqkd.classical import BitString
from siqkd.errors import FramingError, ProtocolError
from siqkd.sampling import RngStream, combine_chsh, estimate_from_counts
from siqkd.transport import (
    CheckDisclosure,
    Decision,
    EveStrategy,
    Frame,
    GroupCounts,
    Hello,
    QStatePayload,
    ShotGroup,
    Tag,
    decode_bits,
    decode_frame,
    encode_bits,
    encode_frame,
    eve_tap,
)

S = 1 / math.sqrt(2)
ZPX = BlochVector(S, 0, S)


def test_done_frame_roundtrip():
    data = encode_frame(Frame(Tag.DONE))
    assert data == bytes([9, 0, 0, 0, 0])
    assert decode_frame(data) == Frame(Tag.DONE)


def test_qstate_three_records_roundtrip():
    payload = QStatePayload(4, (
        ShotGroup(0, BlochVector(0.1, -0.2, 0.3), 1),
        ShotGroup(1, ZPX, 1),
        ShotGroup(3, BlochVector(-1 / 3, 2 / 3, -2 / 3), 1),
    ))
    data = encode_frame(Frame(Tag.QSTATE, payload.encode()))
    frame = decode_frame(data)
    assert frame.tag == Tag.QSTATE
    assert QStatePayload.decode(frame.payload) == payload
    assert encode_frame(frame) == data
    assert payload.total_shots == 3


def test_wire_layout_is_little_endian():
    data = encode_frame(Frame(Tag.QSTATE, QStatePayload(1, (ShotGroup(2, Z_AXIS, 5),)).encode()))
    assert data[:5] == bytes([2]) + struct.pack("<I", 8 + 32)
    assert struct.unpack_from("<IIIdddI", data, 5) == (1, 1, 2, 0.0, 0.0, 1.0, 5)


def test_framing_errors():
    good = encode_frame(Frame(Tag.MU1, encode_bits(BitString("101"))))
    with pytest.raises(FramingError):
        decode_frame(good[:-1])
    with pytest.raises(FramingError):
        decode_frame(good + b"\x00")
    with pytest.raises(FramingError):
        decode_frame(good[:3])
    with pytest.raises(ProtocolError):
        decode_frame(bytes([42, 0, 0, 0, 0]))
    with pytest.raises(ProtocolError):
        encode_frame(Frame(42))
    with pytest.raises(ProtocolError):
        QStatePayload.decode(QStatePayload(0, (ShotGroup(0, Z_AXIS, 1),)).encode()[:-1])


def test_random_frames_roundtrip():
    rng = np.random.default_rng(51)
    for _ in range(10_000):
        tag = Tag(int(rng.integers(1, 10)))
        payload = rng.integers(0, 256, size=int(rng.integers(0, 64)), dtype=np.uint8).tobytes()
        f = Frame(tag, payload)
        assert decode_frame(encode_frame(f)) == f


def test_message_payload_roundtrips():
    h = Hello(0, 5, 2, 1000, 2**64 - 1)
    assert Hello.decode(h.encode()) == h
    d = CheckDisclosure((GroupCounts(0, 1, 1, 10, 20), GroupCounts(1, 6, 0, 0, 7)))
    assert CheckDisclosure.decode(d.encode()) == d
    dec = Decision(2.8, 0.01)
    assert Decision.decode(dec.encode()) == dec
    for s in ("", "1", "10110", "1" * 17):
        assert decode_bits(encode_bits(BitString(s))) == BitString(s)
    with pytest.raises(ProtocolError):
        decode_bits(encode_bits(BitString("101")) + b"\x00")


def test_eve_none_is_identity():
    p = QStatePayload(0, (ShotGroup(0, ZPX, 100),))
    assert eve_tap(p, EveStrategy.none(), RngStream(1)) is p


def test_eve_along_incoming_axis_changes_nothing():
    p = QStatePayload(0, (ShotGroup(0, ZPX, 1000), ShotGroup(1, -ZPX, 500)))
    out = eve_tap(p, EveStrategy.intercept(Observable(ZPX)), RngStream(2))
    assert out == p


def test_eve_preserves_counts_and_groups():
    p = QStatePayload(3, (ShotGroup(0, Z_AXIS, 1000), ShotGroup(1, -Z_AXIS, 800), ShotGroup(5, X_AXIS, 7)))
    for strat in (EveStrategy.intercept(Observable(ZPX)), EveStrategy.intercept_random()):
        out = eve_tap(p, strat, RngStream(3))
        assert out.ensemble == 3 and out.total_shots == p.total_shots
        for g in (0, 1, 5):
            assert sum(q.count for q in out.parts if q.group == g) == sum(q.count for q in p.parts if q.group == g)
        axes = {(abs(q.state.x), abs(q.state.y), abs(q.state.z)) for q in out.parts}
        assert len(axes) == 1


def test_eve_strategy_validation():
    with pytest.raises(ValueError):
        EveStrategy("intercept_fixed")
    with pytest.raises(ValueError):
        EveStrategy("tamper")
    assert EveStrategy.intercept_random().describe() == "intercept:random"


def test_tapped_channel_factorises_correlations():
    """Alice -> Eve(z) -> Bob over the wire payloads matches the intercept oracle."""
    settings = MeasurementSettings(
        Observable(Z_AXIS), Observable(X_AXIS), Observable(ZPX), Observable(BlochVector(-S, 0, S))
    )
    rng = RngStream(4, "tap")
    eve = EveStrategy.intercept(Observable(Z_AXIS))
    terms = []
    shots = 400_000
    for _, _, a, b in settings.pairs():
        plus = rng.binomial(shots, 0.5)
        sent = QStatePayload(0, (ShotGroup(0, a.axis, plus), ShotGroup(1, -a.axis, shots - plus)))
        wire = QStatePayload.decode(sent.encode())
        received = eve_tap(wire, eve, rng)
        agree = 0
        for part in received.parts:
            p_plus = 0.5 * (1 + part.state.dot(b.axis))
            bob_plus = rng.binomial(part.count, p_plus)
            agree += bob_plus if part.group == 0 else part.count - bob_plus
        terms.append(estimate_from_counts(agree, shots))
    est = combine_chsh(terms)
    assert abs(est.value - chsh_with_intercept(settings, eve.axis)) < 4 * est.std_error
