"""Framed wire protocol between Alice and Bob, and the simulated quantum channel.

A frame is ``tag:u8 | length:u32 | payload`` with every integer little-endian
and every real an IEEE-754 float64.  The quantum channel carries collapsed
qubit states as (group, Bloch vector, multiplicity) records.  Eve's tap is a
pure function on that payload.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from .bloch import BlochVector, EnsembleState, Observable, outcome_probability
from .classical import BitString
from .errors import FramingError, ProtocolError
from .sampling import RngStream

PROTOCOL_VERSION = 1

HEADER = struct.Struct("<BI")
_HELLO = struct.Struct("<BBIIIQ")
_QSTATE_HEAD = struct.Struct("<II")
_SHOT_GROUP = struct.Struct("<IdddI")
_DISCLOSE_ENTRY = struct.Struct("<IIBII")
_DECISION = struct.Struct("<dd")
_U32 = struct.Struct("<I")


class Tag(enum.IntEnum):
    HELLO = 1
    QSTATE = 2
    CHECK_DISCLOSE = 3
    ABORT = 4
    CONTINUE = 5
    MU1 = 6
    W1 = 7
    U2 = 8
    DONE = 9


@dataclass(frozen=True)
class Frame:
    tag: Tag
    payload: bytes = b""


def encode_frame(frame: Frame) -> bytes:
    try:
        tag = Tag(frame.tag)
    except ValueError:
        raise ProtocolError(f"unknown frame tag {frame.tag!r}") from None
    if len(frame.payload) > 0xFFFFFFFF:
        raise FramingError("payload too large for a 32-bit length field")
    return HEADER.pack(tag, len(frame.payload)) + bytes(frame.payload)


def decode_frame(data: bytes) -> Frame:
    """Decode exactly one frame; the buffer must hold nothing else."""
    if len(data) < HEADER.size:
        raise FramingError(f"truncated frame header ({len(data)} bytes)")
    raw_tag, length = HEADER.unpack_from(data)
    if len(data) - HEADER.size != length:
        raise FramingError(f"length field says {length} payload bytes, got {len(data) - HEADER.size}")
    try:
        tag = Tag(raw_tag)
    except ValueError:
        raise ProtocolError(f"unknown frame tag {raw_tag}") from None
    return Frame(tag, bytes(data[HEADER.size:]))


def _recv_exact(sock, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise FramingError(f"stream closed after {len(buf)} of {n} bytes")
        buf += chunk
    return bytes(buf)


def send_frame(sock, frame: Frame) -> bytes:
    data = encode_frame(frame)
    sock.sendall(data)
    return data


def recv_frame(sock) -> tuple[Frame, bytes]:
    """Read one frame from a socket; returns the frame and its raw bytes."""
    header = _recv_exact(sock, HEADER.size)
    _, length = HEADER.unpack(header)
    data = header + _recv_exact(sock, length)
    return decode_frame(data), data


# -- payloads ------------------------------------------------------------------


@dataclass(frozen=True)
class Hello:
    role: int  # 0 = alice, 1 = bob
    n: int
    k: int
    shots: int
    seed: int
    version: int = PROTOCOL_VERSION

    def encode(self) -> bytes:
        return _HELLO.pack(self.version, self.role, self.n, self.k, self.shots, self.seed)

    @classmethod
    def decode(cls, data: bytes) -> Hello:
        _expect_size(data, _HELLO.size, "HELLO")
        version, role, n, k, shots, seed = _HELLO.unpack(data)
        return cls(role, n, k, shots, seed, version)

    def same_session(self, other: Hello) -> bool:
        return (self.version, self.n, self.k, self.shots, self.seed) == (
            other.version, other.n, other.k, other.shots, other.seed
        )


@dataclass(frozen=True)
class ShotGroup:
    """``count`` shots sharing the collapsed state ``state``.

    ``group`` is the sender's bookkeeping label for the shots; it is preserved
    through the channel so results can be reported per group.
    """

    group: int
    state: BlochVector
    count: int


@dataclass(frozen=True)
class QStatePayload:
    ensemble: int
    parts: tuple[ShotGroup, ...]

    @property
    def total_shots(self) -> int:
        return sum(p.count for p in self.parts)

    def encode(self) -> bytes:
        out = [_QSTATE_HEAD.pack(self.ensemble, len(self.parts))]
        for p in self.parts:
            out.append(_SHOT_GROUP.pack(p.group, p.state.x, p.state.y, p.state.z, p.count))
        return b"".join(out)

    @classmethod
    def decode(cls, data: bytes) -> QStatePayload:
        if len(data) < _QSTATE_HEAD.size:
            raise ProtocolError("truncated QSTATE payload")
        ensemble, nparts = _QSTATE_HEAD.unpack_from(data)
        _expect_size(data, _QSTATE_HEAD.size + nparts * _SHOT_GROUP.size, "QSTATE")
        parts = []
        for i in range(nparts):
            g, x, y, z, c = _SHOT_GROUP.unpack_from(data, _QSTATE_HEAD.size + i * _SHOT_GROUP.size)
            parts.append(ShotGroup(g, BlochVector(x, y, z), c))
        return cls(ensemble, tuple(parts))


@dataclass(frozen=True)
class GroupCounts:
    ensemble: int
    group: int
    bob_bit: int
    plus: int
    minus: int


@dataclass(frozen=True)
class CheckDisclosure:
    """Bob's observables and outcome counts for every shot group of the check ensembles."""

    entries: tuple[GroupCounts, ...]

    def encode(self) -> bytes:
        out = [_U32.pack(len(self.entries))]
        for e in self.entries:
            out.append(_DISCLOSE_ENTRY.pack(e.ensemble, e.group, e.bob_bit, e.plus, e.minus))
        return b"".join(out)

    @classmethod
    def decode(cls, data: bytes) -> CheckDisclosure:
        if len(data) < _U32.size:
            raise ProtocolError("truncated CHECK_DISCLOSE payload")
        (count,) = _U32.unpack_from(data)
        _expect_size(data, _U32.size + count * _DISCLOSE_ENTRY.size, "CHECK_DISCLOSE")
        entries = tuple(
            GroupCounts(*_DISCLOSE_ENTRY.unpack_from(data, _U32.size + i * _DISCLOSE_ENTRY.size))
            for i in range(count)
        )
        return cls(entries)


@dataclass(frozen=True)
class Decision:
    """Payload of ABORT and CONTINUE: the CHSH estimate Alice decided on."""

    chsh_value: float
    chsh_stderr: float

    def encode(self) -> bytes:
        return _DECISION.pack(self.chsh_value, self.chsh_stderr)

    @classmethod
    def decode(cls, data: bytes) -> Decision:
        _expect_size(data, _DECISION.size, "decision")
        return cls(*_DECISION.unpack(data))


def encode_bits(bits: BitString) -> bytes:
    return _U32.pack(len(bits)) + bits.to_bytes()


def decode_bits(data: bytes) -> BitString:
    if len(data) < _U32.size:
        raise ProtocolError("truncated bit-string payload")
    (n,) = _U32.unpack_from(data)
    _expect_size(data, _U32.size + (n + 7) // 8, "bit string")
    return BitString.from_bytes(data[_U32.size:], n)


def _expect_size(data: bytes, size: int, what: str) -> None:
    if len(data) != size:
        raise ProtocolError(f"{what} payload must be {size} bytes, got {len(data)}")


# -- the quantum channel and Eve -------------------------------------------------


@dataclass(frozen=True)
class EveStrategy:
    kind: str = "none"  # none | intercept_fixed | intercept_random
    axis: Observable | None = None

    def __post_init__(self):
        if self.kind not in ("none", "intercept_fixed", "intercept_random"):
            raise ValueError(f"unknown Eve strategy {self.kind!r}")
        if (self.kind == "intercept_fixed") != (self.axis is not None):
            raise ValueError("intercept_fixed needs an axis, and only it takes one")

    @classmethod
    def none(cls) -> EveStrategy:
        return cls()

    @classmethod
    def intercept(cls, axis: Observable) -> EveStrategy:
        return cls("intercept_fixed", axis)

    @classmethod
    def intercept_random(cls) -> EveStrategy:
        return cls("intercept_random")

    def describe(self) -> str:
        if self.kind == "intercept_fixed":
            a = self.axis.axis
            return f"intercept:{a.x:.17g},{a.y:.17g},{a.z:.17g}"
        return {"none": "none", "intercept_random": "intercept:random"}[self.kind]


def eve_tap(payload: QStatePayload, strategy: EveStrategy, rng: RngStream) -> QStatePayload:
    """Eve measures every shot in transit and forwards the collapsed result.

    For the random strategy one uniformly random axis is drawn per ensemble.
    Each incoming group splits into the shots that collapsed to +e and to -e.
    """
    if strategy.kind == "none":
        return payload
    if strategy.kind == "intercept_fixed":
        e = strategy.axis
    else:
        e = Observable(BlochVector.from_array(rng.unit_vectors(1)[0]), "E")
    parts = []
    for p in payload.parts:
        plus = rng.binomial(p.count, outcome_probability(EnsembleState(p.state), e, 1))
        for sign, count in ((1, plus), (-1, p.count - plus)):
            if count:
                parts.append(ShotGroup(p.group, e.axis * sign, count))
    return QStatePayload(payload.ensemble, tuple(parts))


class QuantumChannel:
    """Error-free channel from Alice to Bob with Eve's tap point on it."""

    def __init__(self, strategy: EveStrategy, rng: RngStream):
        self.strategy = strategy
        self.rng = rng

    def transmit(self, payload: QStatePayload) -> QStatePayload:
        return eve_tap(payload, self.strategy, self.rng)
