"""A full session: raw key exchange over the quantum channel, the CHSH check, and distillation.

Alice and Bob are written as small state machines whose methods consume and
produce message values.  :func:`run_session` drives both in one process;
:func:`run_alice` and :func:`run_bob` drive one role each over a socket using
the frames in :mod:`siqkd.transport`.  Both paths call the same methods in the
same order, so a given master seed gives the same session either way.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .bloch import FULLY_MIXED, Z_AXIS, X_AXIS, EnsembleState, Observable, outcome_probability
from .chsh import MeasurementSettings
from .classical import (
    BinaryMatrix,
    BitString,
    HashSpec,
    alice_reply,
    alice_round,
    bob_hash_matrix,
    bob_recover,
    bob_round,
    matvec,
    toeplitz_matrix,
)
from .errors import ConfigError, ProtocolError
from .sampling import ChshEstimate, RngStream, combine_chsh, estimate_from_counts
from .transport import (
    CheckDisclosure,
    Decision,
    EveStrategy,
    Frame,
    GroupCounts,
    Hello,
    QStatePayload,
    QuantumChannel,
    ShotGroup,
    Tag,
    decode_bits,
    encode_bits,
    encode_frame,
    recv_frame,
    send_frame,
)

__all__ = [
    "EveStrategy",
    "SessionConfig",
    "SessionReport",
    "decide_abort",
    "run_alice",
    "run_bob",
    "run_session",
    "select_observable",
    "toy_config",
]

COMPLEMENT = (0.0, 0.5, 0.5, 0.0)  # P(x, y) for (00, 01, 10, 11): y is the complement of x
PAIR_ORDER = ((0, 0), (0, 1), (1, 0), (1, 1))
BLOCKS = 4

SQRT2 = math.sqrt(2.0)
TOY_SETTINGS = MeasurementSettings(
    Observable(Z_AXIS, "A1"),
    Observable(X_AXIS, "A2"),
    Observable((Z_AXIS + X_AXIS) / SQRT2, "B1"),
    Observable((Z_AXIS - X_AXIS) / SQRT2, "B2"),
)


def select_observable(bit: int, side: str, settings: MeasurementSettings) -> Observable:
    """0 selects A1 (or B1), 1 selects A2 (or B2)."""
    if bit not in (0, 1):
        raise ValueError(f"bit must be 0 or 1, got {bit!r}")
    if side == "alice":
        return settings.alice(bit)
    if side == "bob":
        return settings.bob(bit)
    raise ValueError(f"side must be 'alice' or 'bob', got {side!r}")


def decide_abort(chsh: ChshEstimate, threshold: float) -> bool:
    """Abort when the statistic falls strictly below the threshold."""
    return chsh.value < threshold


@dataclass(frozen=True)
class SessionConfig:
    n: int
    k: int
    shots_per_ensemble: int
    settings: MeasurementSettings = TOY_SETTINGS
    threshold: float = 2.0
    master_seed: int = 0
    initial_state: EnsembleState = FULLY_MIXED
    matrix: BinaryMatrix | None = None
    hash: HashSpec | None = None
    eve: EveStrategy = field(default_factory=EveStrategy.none)
    joint_distribution: tuple[float, float, float, float] = COMPLEMENT
    x1: BitString | None = None
    y1: BitString | None = None
    x2: BitString | None = None
    y2: BitString | None = None  # fixed key-ensemble outcomes, for replaying worked examples

    def __post_init__(self):
        if not 1 <= self.k < self.n:
            raise ConfigError(f"need 1 <= k < n, got n={self.n}, k={self.k}")
        if self.shots_per_ensemble < BLOCKS:
            raise ConfigError(f"shots_per_ensemble must be at least {BLOCKS}")
        if not SQRT2 < self.threshold < 2 * SQRT2:
            raise ConfigError(f"threshold must lie in (sqrt 2, 2 sqrt 2), got {self.threshold}")
        if not 0 <= self.master_seed < 1 << 64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")
        m = self.key_length
        if self.matrix is None:
            object.__setattr__(self, "matrix", BinaryMatrix.identity(m))
        if self.matrix.rows != m or self.matrix.cols != m:
            raise ConfigError(f"matrix must be {m}x{m}, got {self.matrix.rows}x{self.matrix.cols}")
        if not self.matrix.is_invertible():
            raise ConfigError("matrix must be invertible over GF(2)")
        if self.hash is None:
            object.__setattr__(self, "hash", HashSpec(self.master_seed, m, m))
        if self.hash.input_length != m:
            raise ConfigError(f"hash input length must be n-k = {m}")
        p = np.asarray(self.joint_distribution, dtype=float)
        if p.shape != (4,) or (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
            raise ConfigError("joint_distribution must be four non-negative probabilities summing to 1")
        for name in ("x1", "y1", "x2"):
            s = getattr(self, name)
            if s is not None and len(s) != self.n:
                raise ConfigError(f"{name} must have n = {self.n} bits")
        if self.y2 is not None and len(self.y2) != m:
            raise ConfigError(f"y2 must have n-k = {m} bits")

    @property
    def key_length(self) -> int:
        return self.n - self.k

    @property
    def ideal_key_rate(self) -> float:
        return (self.n - self.k) / self.n

    def hello(self, role: int) -> Hello:
        return Hello(role, self.n, self.k, self.shots_per_ensemble, self.master_seed)


def toy_config(**overrides) -> SessionConfig:
    """The five-qubit worked example: X1=10101, Y1=01010, X2=10110, Y2=100, M=I."""
    params = dict(
        n=5,
        k=2,
        shots_per_ensemble=100_000,
        settings=TOY_SETTINGS,
        x1=BitString("10101"),
        y1=BitString("01010"),
        x2=BitString("10110"),
        y2=BitString("100"),
    )
    params.update(overrides)
    return SessionConfig(**params)


def draw_source(config: SessionConfig) -> tuple[BitString, BitString]:
    """Classically correlated X1, Y1 from the shared source stream (or the configured overrides)."""
    rng = RngStream(config.master_seed, "source")
    cells = rng.generator.choice(4, size=config.n, p=np.asarray(config.joint_distribution))
    x1 = BitString(cells >> 1) if config.x1 is None else config.x1
    y1 = BitString(cells & 1) if config.y1 is None else config.y1
    return x1, y1


def block_sizes(shots: int, blocks: int = BLOCKS) -> list[int]:
    base, extra = divmod(shots, blocks)
    return [base + (j < extra) for j in range(blocks)]


def _pair_label(i: int, j: int) -> str:
    return f"A{i + 1}B{j + 1}"


# -- Alice ---------------------------------------------------------------------


class Alice:
    def __init__(self, config: SessionConfig):
        self.config = config
        self.x1, _ = draw_source(config)
        rng = RngStream(config.master_seed, "alice")
        self.x2 = config.x2 if config.x2 is not None else BitString.random(config.n, rng.child("x2"))
        self.u1 = self.x1 ^ self.x2
        self.measure_rng = rng.child("measure")
        # (ensemble, group) -> (alice bit, outcome, shots)
        self.groups: dict[tuple[int, int], tuple[int, int, int]] = {}
        self.chsh: ChshEstimate | None = None
        self.aborted: bool | None = None
        self.schedule: list[dict] = []
        self.mu1 = self.u2 = None

    def hello(self) -> Hello:
        return self.config.hello(0)

    def on_hello(self, hello: Hello) -> None:
        if hello.role != 1 or not hello.same_session(self.hello()):
            raise ProtocolError(f"peer HELLO does not match this session: {hello}")

    def prepare(self, i: int) -> QStatePayload:
        """Measure ensemble ``i`` and hand the collapsed shots to the channel.

        Check ensembles are split into four blocks, one per setting pair;
        key ensembles are measured whole with the observable U1 selects.
        """
        cfg = self.config
        bit = self.u1[i]
        if i < cfg.k:
            blocks = [(bit ^ (j >> 1), n) for j, n in enumerate(block_sizes(cfg.shots_per_ensemble))]
        else:
            blocks = [(bit, cfg.shots_per_ensemble)]
        parts = []
        for j, (abit, shots) in enumerate(blocks):
            obs = select_observable(abit, "alice", cfg.settings)
            plus = self.measure_rng.binomial(shots, outcome_probability(cfg.initial_state, obs, 1))
            for g, sign, count in ((2 * j, 1, plus), (2 * j + 1, -1, shots - plus)):
                self.groups[(i, g)] = (abit, sign, count)
                if count:
                    parts.append(ShotGroup(g, obs.axis * sign, count))
        return QStatePayload(i, tuple(parts))

    def on_disclosure(self, disclosure: CheckDisclosure) -> Decision:
        cfg = self.config
        agree = {p: 0 for p in PAIR_ORDER}
        total = {p: 0 for p in PAIR_ORDER}
        seen = set()
        for e in disclosure.entries:
            key = (e.ensemble, e.group)
            if e.ensemble >= cfg.k or key not in self.groups or key in seen or e.bob_bit not in (0, 1):
                raise ProtocolError(f"unexpected disclosure entry {e}")
            seen.add(key)
            abit, sign, count = self.groups[key]
            if e.plus + e.minus != count:
                raise ProtocolError(f"disclosed counts for {key} do not match {count} shots sent")
            pair = (abit, e.bob_bit)
            agree[pair] += e.plus if sign == 1 else e.minus
            total[pair] += count
        missing = [key for key, (_, _, c) in self.groups.items() if key[0] < cfg.k and c and key not in seen]
        if missing:
            raise ProtocolError(f"disclosure omits shot groups {missing}")
        if any(total[p] == 0 for p in PAIR_ORDER):
            raise ProtocolError("check ensembles do not cover all four setting pairs")
        self.schedule = self._schedule(disclosure)
        self.chsh = combine_chsh(estimate_from_counts(agree[p], total[p]) for p in PAIR_ORDER)
        self.aborted = decide_abort(self.chsh, cfg.threshold)
        return Decision(self.chsh.value, self.chsh.std_error)

    def _schedule(self, disclosure: CheckDisclosure) -> list[dict]:
        bob_bits = {(e.ensemble, e.group // 2): e.bob_bit for e in disclosure.entries}
        rows = []
        for i in range(self.config.k):
            for j, shots in enumerate(block_sizes(self.config.shots_per_ensemble)):
                abit = self.groups[(i, 2 * j)][0]
                rows.append(
                    {
                        "ensemble": i,
                        "block": j,
                        "pair": _pair_label(abit, bob_bits[(i, j)]),
                        "shots": shots,
                        "augmented": j != 0,
                    }
                )
        return rows

    def make_mu1(self) -> BitString:
        m = self.config.key_length
        _, self.mu1 = alice_round(self.x1.tail(m), self.x2.tail(m), self.config.matrix)
        return self.mu1

    def on_w1(self, w1: BitString) -> BitString:
        m = self.config.key_length
        if len(w1) != m:
            raise ProtocolError(f"W1 must have {m} bits")
        self.u2 = alice_reply(self.x1.tail(m), w1, self.config.matrix)
        return self.u2

    def key(self) -> BitString:
        return matvec(toeplitz_matrix(self.config.hash), self.x2.tail(self.config.key_length))

    def strings(self) -> dict[str, str]:
        out = {"x1": str(self.x1), "x2": str(self.x2), "u1": str(self.u1)}
        if self.mu1 is not None:
            out["mu1"] = str(self.mu1)
        if self.u2 is not None:
            out["u2"] = str(self.u2)
        return out


# -- Bob -----------------------------------------------------------------------


class Bob:
    def __init__(self, config: SessionConfig):
        self.config = config
        _, self.y1 = draw_source(config)
        self.measure_rng = RngStream(config.master_seed, "bob").child("measure")
        self.received: list[QStatePayload] = []
        self.aborted: bool | None = None
        self.decision: Decision | None = None
        self.y2 = self.v1 = self.w1 = self.x2_prime = None
        self.hash_matrix = bob_hash_matrix(config.hash, config.matrix)

    def hello(self) -> Hello:
        return self.config.hello(1)

    def on_hello(self, hello: Hello) -> None:
        if hello.role != 0 or not hello.same_session(self.hello()):
            raise ProtocolError(f"peer HELLO does not match this session: {hello}")

    def receive(self, payload: QStatePayload) -> None:
        if payload.ensemble != len(self.received) or payload.ensemble >= self.config.n:
            raise ProtocolError(f"QSTATE for ensemble {payload.ensemble} arrived out of order")
        if payload.total_shots != self.config.shots_per_ensemble:
            raise ProtocolError(f"ensemble {payload.ensemble} carries {payload.total_shots} shots")
        self.received.append(payload)

    def _measure(self, part: ShotGroup, obs: Observable) -> int:
        return self.measure_rng.binomial(part.count, outcome_probability(EnsembleState(part.state), obs, 1))

    def disclosure(self) -> CheckDisclosure:
        if len(self.received) != self.config.n:
            raise ProtocolError("CHECK_DISCLOSE before all ensembles arrived")
        entries = []
        for i in range(self.config.k):
            counts: dict[int, list[int]] = {}
            for part in self.received[i].parts:
                bbit = self.y1[i] ^ ((part.group // 2) & 1)
                plus = self._measure(part, select_observable(bbit, "bob", self.config.settings))
                c = counts.setdefault(part.group, [bbit, 0, 0])
                c[1] += plus
                c[2] += part.count - plus
            entries.extend(GroupCounts(i, g, *counts[g]) for g in sorted(counts))
        return CheckDisclosure(tuple(entries))

    def on_decision(self, aborted: bool, decision: Decision) -> None:
        self.aborted = aborted
        self.decision = decision
        if aborted:
            return
        cfg = self.config
        y2 = []
        for i in range(cfg.k, cfg.n):
            obs = select_observable(self.y1[i], "bob", cfg.settings)
            plus = sum(self._measure(p, obs) for p in self.received[i].parts)
            y2.append(0 if 2 * plus >= cfg.shots_per_ensemble else 1)
        self.y2 = BitString(y2) if cfg.y2 is None else cfg.y2

    def on_mu1(self, mu1: BitString) -> BitString:
        m = self.config.key_length
        if self.aborted is not False or len(mu1) != m:
            raise ProtocolError("MU1 unexpected or of wrong length")
        self.v1, self.w1 = bob_round(self.y1.tail(m), self.y2, mu1)
        return self.w1

    def on_u2(self, u2: BitString) -> None:
        if len(u2) != self.config.key_length:
            raise ProtocolError("U2 of wrong length")
        self.x2_prime = bob_recover(u2, self.v1)

    def key(self) -> BitString:
        return matvec(self.hash_matrix, self.x2_prime)

    def strings(self) -> dict[str, str]:
        out = {"y1": str(self.y1)}
        for name in ("y2", "v1", "w1", "x2_prime"):
            val = getattr(self, name)
            if val is not None:
                out[name] = str(val)
        return out


# -- reports and transcripts ------------------------------------------------------


@dataclass
class SessionReport:
    chsh: ChshEstimate
    aborted: bool
    transcript: list[dict]
    key_alice: BitString | None
    key_bob: BitString | None
    ideal_key_rate: float
    threshold: float
    role: str = "both"
    strings: dict[str, str] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        def hexkey(key):
            return None if key is None else key.hex()

        return {
            "role": self.role,
            "chsh_value": self.chsh.value,
            "chsh_stderr": self.chsh.std_error,
            "chsh_terms": [{"mean": t.mean, "stderr": t.std_error, "shots": t.shots} for t in self.chsh.per_term],
            "threshold": self.threshold,
            "aborted": self.aborted,
            "key_alice_hex": hexkey(self.key_alice),
            "key_bob_hex": hexkey(self.key_bob),
            "key_length": None if self.aborted else self.meta.get("key_length"),
            "key_rate": self.ideal_key_rate,
            **{k: v for k, v in self.meta.items() if k != "key_length"},
            "strings": self.strings,
            "transcript": self.transcript,
        }


class Transcript:
    """Ordered log of public messages; the quantum channel is logged by digest only."""

    def __init__(self):
        self.entries: list[dict] = []

    def frame(self, sender: str, data: bytes) -> None:
        tag = Tag(data[0])
        entry = {"kind": "frame", "seq": len(self.entries), "sender": sender, "tag": tag.name,
                 "length": len(data) - 5}
        if tag == Tag.QSTATE:
            entry["sha256"] = hashlib.sha256(data).hexdigest()
        else:
            entry["hex"] = data.hex()
        self.entries.append(entry)

    def note(self, party: str, **fields) -> None:
        self.entries.append({"kind": "note", "seq": len(self.entries), "party": party, **fields})


def _meta(config: SessionConfig) -> dict:
    return {"n": config.n, "k": config.k, "shots_per_ensemble": config.shots_per_ensemble,
            "seed": config.master_seed, "eve": config.eve.describe(), "key_length": config.key_length}


def _decision_frame(aborted: bool, decision: Decision) -> Frame:
    return Frame(Tag.ABORT if aborted else Tag.CONTINUE, decision.encode())


def run_session(config: SessionConfig) -> SessionReport:
    """Run both roles in this process, passing message values directly."""
    alice, bob = Alice(config), Bob(config)
    channel = QuantumChannel(config.eve, RngStream(config.master_seed, "eve"))
    log = Transcript()

    h = alice.hello()
    log.frame("alice", encode_frame(Frame(Tag.HELLO, h.encode())))
    bob.on_hello(h)
    h = bob.hello()
    log.frame("bob", encode_frame(Frame(Tag.HELLO, h.encode())))
    alice.on_hello(h)

    for i in range(config.n):
        payload = alice.prepare(i)
        log.frame("alice", encode_frame(Frame(Tag.QSTATE, payload.encode())))
        bob.receive(channel.transmit(payload))

    disclosure = bob.disclosure()
    log.frame("bob", encode_frame(Frame(Tag.CHECK_DISCLOSE, disclosure.encode())))
    decision = alice.on_disclosure(disclosure)
    log.note("alice", check_schedule=alice.schedule)
    log.frame("alice", encode_frame(_decision_frame(alice.aborted, decision)))
    bob.on_decision(alice.aborted, decision)

    key_alice = key_bob = None
    if not alice.aborted:
        mu1 = alice.make_mu1()
        log.frame("alice", encode_frame(Frame(Tag.MU1, encode_bits(mu1))))
        w1 = bob.on_mu1(mu1)
        log.frame("bob", encode_frame(Frame(Tag.W1, encode_bits(w1))))
        u2 = alice.on_w1(w1)
        log.frame("alice", encode_frame(Frame(Tag.U2, encode_bits(u2))))
        bob.on_u2(u2)
        log.frame("bob", encode_frame(Frame(Tag.DONE)))
        key_alice, key_bob = alice.key(), bob.key()

    return SessionReport(
        chsh=alice.chsh,
        aborted=alice.aborted,
        transcript=log.entries,
        key_alice=key_alice,
        key_bob=key_bob,
        ideal_key_rate=config.ideal_key_rate,
        threshold=config.threshold,
        strings={**alice.strings(), **bob.strings()},
        meta=_meta(config),
    )


# -- one role over a socket ---------------------------------------------------------


class _Link:
    def __init__(self, sock, me: str, peer: str, log: Transcript):
        self.sock, self.me, self.peer, self.log = sock, me, peer, log

    def send(self, tag: Tag, payload: bytes = b"") -> None:
        self.log.frame(self.me, send_frame(self.sock, Frame(tag, payload)))

    def recv(self, *expected: Tag) -> Frame:
        frame, data = recv_frame(self.sock)
        if frame.tag not in expected:
            names = "/".join(t.name for t in expected)
            raise ProtocolError(f"expected {names}, got {frame.tag.name}")
        self.log.frame(self.peer, data)
        return frame


def run_alice(sock, config: SessionConfig) -> SessionReport:
    alice = Alice(config)
    log = Transcript()
    link = _Link(sock, "alice", "bob", log)

    link.send(Tag.HELLO, alice.hello().encode())
    alice.on_hello(Hello.decode(link.recv(Tag.HELLO).payload))
    for i in range(config.n):
        link.send(Tag.QSTATE, alice.prepare(i).encode())
    decision = alice.on_disclosure(CheckDisclosure.decode(link.recv(Tag.CHECK_DISCLOSE).payload))
    log.note("alice", check_schedule=alice.schedule)
    link.send(Tag.ABORT if alice.aborted else Tag.CONTINUE, decision.encode())

    key = None
    if not alice.aborted:
        link.send(Tag.MU1, encode_bits(alice.make_mu1()))
        u2 = alice.on_w1(decode_bits(link.recv(Tag.W1).payload))
        link.send(Tag.U2, encode_bits(u2))
        link.recv(Tag.DONE)
        key = alice.key()

    return SessionReport(alice.chsh, alice.aborted, log.entries, key, None, config.ideal_key_rate,
                         config.threshold, role="alice", strings=alice.strings(), meta=_meta(config))


def run_bob(sock, config: SessionConfig) -> SessionReport:
    """Bob's side; Eve's tap sits on the inbound quantum frames."""
    bob = Bob(config)
    channel = QuantumChannel(config.eve, RngStream(config.master_seed, "eve"))
    log = Transcript()
    link = _Link(sock, "bob", "alice", log)

    bob.on_hello(Hello.decode(link.recv(Tag.HELLO).payload))
    link.send(Tag.HELLO, bob.hello().encode())
    for _ in range(config.n):
        bob.receive(channel.transmit(QStatePayload.decode(link.recv(Tag.QSTATE).payload)))
    link.send(Tag.CHECK_DISCLOSE, bob.disclosure().encode())
    frame = link.recv(Tag.ABORT, Tag.CONTINUE)
    decision = Decision.decode(frame.payload)
    bob.on_decision(frame.tag == Tag.ABORT, decision)

    key = None
    if not bob.aborted:
        mu1 = decode_bits(link.recv(Tag.MU1).payload)
        link.send(Tag.W1, encode_bits(bob.on_mu1(mu1)))
        bob.on_u2(decode_bits(link.recv(Tag.U2).payload))
        link.send(Tag.DONE)
        key = bob.key()

    chsh = ChshEstimate(decision.chsh_value, decision.chsh_stderr, ())
    return SessionReport(chsh, bob.aborted, log.entries, None, key, config.ideal_key_rate,
                         config.threshold, role="bob", strings=bob.strings(), meta=_meta(config))
