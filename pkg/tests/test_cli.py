import csv
import io
import json
import subprocess
import sys

import pytest

from siqkd.cli import main
from siqkd.classical import BinaryMatrix
from siqkd.sampling import RngStream

from twoproc import run_cli_pair


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr().out
    return code, out


def test_toy_ok(capsys):
    code, out = run(["toy"], capsys)
    assert code == 0
    assert "toy example: OK" in out
    for line in ("X2'  110", "MU1  011", "W1  101", "U2  000", "key rate  3/5"):
        assert line in out


def test_toy_with_other_x2(capsys):
    code, out = run(["toy", "--x2", "00000"], capsys)
    assert code == 0 and "OK" in out


def test_toy_with_random_invertible_matrix(tmp_path, capsys):
    path = tmp_path / "m.txt"
    path.write_text(BinaryMatrix.random_invertible(3, RngStream(8)).dump())
    code, out = run(["toy", "--matrix-file", str(path)], capsys)
    assert code == 0 and "OK" in out


def test_toy_rejects_singular_matrix(tmp_path, capsys):
    path = tmp_path / "m.txt"
    path.write_text("3 3\n110\n110\n001\n")
    with pytest.raises(SystemExit) as exc:
        main(["toy", "--matrix-file", str(path)])
    assert exc.value.code == 2


def test_run_report_fields(capsys):
    code, out = run(["run", "--n", "8", "--k", "2", "--shots", "20000", "--seed", "3"], capsys)
    assert code == 0
    report = json.loads(out)
    for key in ("chsh_value", "chsh_stderr", "aborted", "key_alice_hex", "key_bob_hex", "key_rate", "transcript"):
        assert key in report
    assert not report["aborted"]
    assert report["key_alice_hex"] == report["key_bob_hex"]
    assert report["key_rate"] == 6 / 8


def test_run_with_intercept_aborts(capsys):
    code, out = run(["run", "--n", "8", "--k", "2", "--shots", "20000", "--eve", "intercept:z"], capsys)
    report = json.loads(out)
    assert report["aborted"] and report["key_alice_hex"] is None
    assert code == 0  # an abort is a valid outcome, not a failure


@pytest.mark.parametrize("argv", [
    ["run", "--n", "5", "--k", "5"],
    ["run", "--eve", "tamper"],
    ["run", "--threshold", "3.0"],
    ["run", "--role", "alice"],
    ["chsh", "--a1", "q"],
])
def test_usage_errors_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2


def test_same_seed_same_bytes(tmp_path):
    cmd = [sys.executable, "-m", "siqkd.cli", "run", "--n", "8", "--k", "2", "--shots", "5000",
           "--seed", "42", "--eve", "intercept:random"]
    a = subprocess.run(cmd, capture_output=True, check=False).stdout
    b = subprocess.run(cmd, capture_output=True, check=False).stdout
    assert a == b and a


def test_seed_from_environment(monkeypatch, capsys):
    monkeypatch.setenv("SIQKD_SEED", "77")
    _, out = run(["run", "--n", "6", "--k", "2", "--shots", "100"], capsys)
    assert json.loads(out)["seed"] == 77


def test_chsh_table(capsys):
    code, out = run(["chsh", "--shots", "100000", "--seed", "1"], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 1 and rows[0]["analytic"] == "2.828427"
    assert abs(float(rows[0]["sampled"]) - 2.828427) < 5 * float(rows[0]["stderr"])


def test_chsh_sweep_peaks_at_orthogonal_b(capsys):
    _, out = run(["chsh", "--shots", "1000", "--sweep-b2", "9"], capsys)
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 9
    best = max(rows, key=lambda r: float(r["analytic"]))
    assert best["b1_b2_angle"] == "1.570796" and best["analytic"] == "2.828427"


def test_tb_table(capsys):
    code, out = run(["tb", "--rounds", "200000", "--seed", "2"], capsys)
    assert code == 0
    row = next(csv.DictReader(io.StringIO(out)))
    assert abs(float(row["tb_value"]) - 2.828427) < 5 * float(row["tb_stderr"])
    assert row["bits"] == str(4 * 200000)


def test_sweep_lines(tmp_path, capsys):
    path = tmp_path / "sweep.jsonl"
    code, _ = run(["sweep", "--sessions", "3", "--n", "6", "--k", "2", "--shots", "2000",
                   "--eves", "none;intercept:z", "--report-path", str(path)], capsys)
    assert code == 0
    lines = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(lines) == 6
    assert {r["eve"] for r in lines} == {"none", "intercept:0,0,1"}
    assert len({r["seed"] for r in lines if r["eve"] == "none"}) == 3


def test_two_process_session(tmp_path):
    alice, bob = run_cli_pair(tmp_path, ["--n", "8", "--k", "2", "--shots", "20000", "--seed", "5"])
    assert alice["role"] == "alice" and bob["role"] == "bob"
    assert not alice["aborted"] and not bob["aborted"]
    assert alice["key_alice_hex"] == bob["key_bob_hex"]
    assert alice["chsh_value"] == bob["chsh_value"]
    strip = lambda t: [{k: v for k, v in e.items() if k != "seq"} for e in t if e["kind"] == "frame"]
    assert strip(alice["transcript"]) == strip(bob["transcript"])


def test_two_process_session_with_eve(tmp_path):
    alice, bob = run_cli_pair(tmp_path, ["--n", "8", "--k", "2", "--shots", "20000", "--eve", "intercept:x"])
    assert alice["aborted"] and bob["aborted"]
    assert alice["key_alice_hex"] is None and bob["key_bob_hex"] is None
