import math

import pytest

from siqkd.bloch import X_AXIS, Y_AXIS, Z_AXIS, EnsembleState, Observable
from siqkd.classical import BinaryMatrix, BitString, HashSpec, matvec, toeplitz_matrix
from siqkd.errors import ConfigError, ProtocolError
from siqkd.protocol import (
    TOY_SETTINGS,
    Alice,
    Bob,
    SessionConfig,
    block_sizes,
    decide_abort,
    draw_source,
    run_session,
    select_observable,
    toy_config,
)
from siqkd.sampling import ChshEstimate, RngStream
from siqkd.transport import CheckDisclosure, EveStrategy, GroupCounts, decode_frame

from twoproc import run_over_socketpair


def _chsh(v):
    return ChshEstimate(v, 0.0, ())


def test_select_observable():
    s = TOY_SETTINGS
    assert select_observable(0, "alice", s) is s.a1
    assert select_observable(1, "alice", s) is s.a2
    assert select_observable(0, "bob", s) is s.b1
    assert select_observable(1, "bob", s) is s.b2
    labels = [select_observable(b, "alice", s).label for b in BitString("00011")]
    assert labels == ["A1", "A1", "A1", "A2", "A2"]
    with pytest.raises(ValueError):
        select_observable(2, "alice", s)


def test_decide_abort_boundary():
    assert decide_abort(_chsh(2.82), 2.0) is False
    assert decide_abort(_chsh(1.41), 2.0) is True
    assert decide_abort(_chsh(2.0), 2.0) is False


def test_toy_session_reproduces_worked_example():
    report = run_session(toy_config())
    s = report.strings
    assert (s["x1"], s["y1"], s["x2"], s["u1"]) == ("10101", "01010", "10110", "00011")
    assert (s["y2"], s["v1"], s["w1"], s["u2"], s["x2_prime"]) == ("100", "110", "101", "000", "110")
    assert report.ideal_key_rate == 3 / 5
    assert not report.aborted
    assert report.key_alice == report.key_bob
    assert report.key_alice == matvec(toeplitz_matrix(HashSpec(0, 3, 3)), BitString("110"))


def test_toy_session_without_fixed_y2_still_recovers():
    report = run_session(toy_config(y2=None, master_seed=9))
    assert report.strings["x2_prime"] == "110"
    assert report.key_alice == report.key_bob


def test_default_source_is_complement():
    cfg = SessionConfig(n=40, k=4, shots_per_ensemble=8, master_seed=3)
    x1, y1 = draw_source(cfg)
    assert y1 == x1.complement()
    cfg = SessionConfig(n=40, k=4, shots_per_ensemble=8, master_seed=3, joint_distribution=(0.5, 0, 0, 0.5))
    x1, y1 = draw_source(cfg)
    assert y1 == x1


def test_block_sizes():
    assert block_sizes(10) == [3, 3, 2, 2]
    assert sum(block_sizes(100_001)) == 100_001


def test_config_validation():
    with pytest.raises(ConfigError):
        SessionConfig(n=5, k=5, shots_per_ensemble=100)
    with pytest.raises(ConfigError):
        SessionConfig(n=5, k=0, shots_per_ensemble=100)
    with pytest.raises(ConfigError):
        SessionConfig(n=5, k=2, shots_per_ensemble=3)
    with pytest.raises(ConfigError):
        SessionConfig(n=5, k=2, shots_per_ensemble=100, threshold=3.0)
    with pytest.raises(ConfigError):
        SessionConfig(n=5, k=2, shots_per_ensemble=100, matrix=BinaryMatrix.identity(4))
    with pytest.raises(ConfigError):
        SessionConfig(n=5, k=2, shots_per_ensemble=100, matrix=BinaryMatrix([[1, 1, 0], [1, 1, 0], [0, 0, 1]]))
    with pytest.raises(ConfigError):
        SessionConfig(n=5, k=2, shots_per_ensemble=100, x1=BitString("101"))
    with pytest.raises(ConfigError):
        SessionConfig(n=5, k=2, shots_per_ensemble=100, joint_distribution=(0.5, 0.5, 0.5, 0))


def _honest(seed, **kw):
    return SessionConfig(n=12, k=4, shots_per_ensemble=100_000, master_seed=seed, **kw)


def test_honest_session_continues_and_keys_agree():
    report = run_session(_honest(1))
    assert not report.aborted
    assert abs(report.chsh.value - 2 * math.sqrt(2)) < 5 * report.chsh.std_error
    assert report.key_alice == report.key_bob and len(report.key_alice) == 8
    assert report.ideal_key_rate == 8 / 12
    assert all(t.shots == 100_000 for t in report.chsh.per_term)


def test_intercept_session_aborts():
    report = run_session(_honest(2, eve=EveStrategy.intercept(Observable(Z_AXIS))))
    assert report.aborted
    assert report.chsh.value < math.sqrt(2) + 5 * report.chsh.std_error
    assert report.key_alice is None and report.key_bob is None


def test_key_agreement_with_random_matrix_and_short_hash():
    rng = RngStream(5)
    M = BinaryMatrix.random_invertible(8, rng)
    report = run_session(_honest(3, matrix=M, hash=HashSpec(99, 8, 5), initial_state=EnsembleState(Y_AXIS)))
    assert not report.aborted
    assert report.key_alice == report.key_bob and len(report.key_alice) == 5
    assert report.strings["x2_prime"] == str(matvec(M, BitString(report.strings["x2"]).tail(8)))


def test_transcript_contents():
    report = run_session(toy_config())
    frames = [e for e in report.transcript if e["kind"] == "frame"]
    tags = [e["tag"] for e in frames]
    assert tags == ["HELLO", "HELLO"] + ["QSTATE"] * 5 + ["CHECK_DISCLOSE", "CONTINUE", "MU1", "W1", "U2", "DONE"]
    senders = [e["sender"] for e in frames]
    assert senders[:2] == ["alice", "bob"] and senders[-4:] == ["alice", "bob", "alice", "bob"]
    hexes = {e["tag"]: e.get("hex") for e in frames}
    from siqkd.transport import decode_bits

    for tag, want in (("MU1", "011"), ("W1", "101"), ("U2", "000")):
        assert str(decode_bits(decode_frame(bytes.fromhex(hexes[tag])).payload)) == want
    public = {e["tag"]: decode_frame(bytes.fromhex(e["hex"])).payload for e in frames if "hex" in e}
    assert public["DONE"] == b""
    assert all("sha256" in e for e in frames if e["tag"] == "QSTATE")
    notes = [e for e in report.transcript if e["kind"] == "note"]
    assert len(notes) == 1 and len(notes[0]["check_schedule"]) == 8
    natural = [r["pair"] for r in notes[0]["check_schedule"] if not r["augmented"]]
    assert natural == ["A1B1", "A1B2"]
    assert {r["pair"] for r in notes[0]["check_schedule"]} == {"A1B1", "A1B2", "A2B1", "A2B2"}


def test_transcript_never_carries_secrets():
    for seed in range(5):
        report = run_session(_honest(seed, x2=None))
        json_report = report.to_json()
        for e in json_report["transcript"]:
            assert set(e) & {"x2", "y2", "key", "key_alice", "key_bob"} == set()
        frames = {e["tag"] for e in report.transcript if e["kind"] == "frame"}
        assert {"MU1", "W1", "U2", "CHECK_DISCLOSE"} <= frames


def test_aborted_transcript_stops_after_abort():
    report = run_session(toy_config(eve=EveStrategy.intercept(Observable(X_AXIS))))
    tags = [e["tag"] for e in report.transcript if e["kind"] == "frame"]
    assert tags[-1] == "ABORT" and "MU1" not in tags


def test_deterministic():
    a = run_session(_honest(7, eve=EveStrategy.intercept_random())).to_json()
    b = run_session(_honest(7, eve=EveStrategy.intercept_random())).to_json()
    assert a == b


def test_alice_rejects_bad_disclosure():
    cfg = toy_config()
    alice, bob = Alice(cfg), Bob(cfg)
    for i in range(cfg.n):
        bob.receive(alice.prepare(i))
    good = bob.disclosure()
    tampered = CheckDisclosure(good.entries[:-1])
    with pytest.raises(ProtocolError):
        alice.on_disclosure(tampered)
    e = good.entries[0]
    wrong = CheckDisclosure((GroupCounts(e.ensemble, e.group, e.bob_bit, e.plus + 1, e.minus),) + good.entries[1:])
    with pytest.raises(ProtocolError):
        alice.on_disclosure(wrong)
    alice.on_disclosure(good)


def test_bob_rejects_out_of_order_qstate():
    cfg = toy_config()
    alice, bob = Alice(cfg), Bob(cfg)
    alice.prepare(0)
    with pytest.raises(ProtocolError):
        bob.receive(alice.prepare(1))


@pytest.mark.parametrize("eve", [EveStrategy.none(), EveStrategy.intercept(Observable(Z_AXIS))])
def test_socket_session_matches_in_process(eve):
    cfg = toy_config(eve=eve, master_seed=11)
    local = run_session(cfg)
    alice, bob = run_over_socketpair(cfg)
    assert alice.chsh == local.chsh
    assert bob.chsh.value == local.chsh.value and bob.chsh.std_error == local.chsh.std_error
    assert alice.aborted == bob.aborted == local.aborted
    assert alice.key_alice == local.key_alice and bob.key_bob == local.key_bob
    local_frames = [e for e in local.transcript if e["kind"] == "frame"]
    for side in (alice, bob):
        frames = [{k: v for k, v in e.items() if k != "seq"} for e in side.transcript if e["kind"] == "frame"]
        assert frames == [{k: v for k, v in e.items() if k != "seq"} for e in local_frames]


def test_socket_session_detects_mismatched_hello():
    import socket
    import threading

    from siqkd.protocol import run_alice, run_bob

    a_sock, b_sock = socket.socketpair()
    errors = []

    def bob():
        try:
            run_bob(b_sock, toy_config(master_seed=2))
        except Exception as exc:
            errors.append(exc)
        finally:
            b_sock.close()

    t = threading.Thread(target=bob)
    t.start()
    with pytest.raises(Exception):
        run_alice(a_sock, toy_config(master_seed=1))
    a_sock.close()
    t.join(10)
    assert errors and isinstance(errors[0], ProtocolError)
