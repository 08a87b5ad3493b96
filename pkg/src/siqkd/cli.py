"""Command-line entry point: ``siqkd {toy,run,sweep,chsh,tb}``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import socket
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .bloch import ORIGIN, X_AXIS, Y_AXIS, Z_AXIS, BlochVector, EnsembleState, Observable
from .chsh import MeasurementSettings, chsh_value
from .classical import BinaryMatrix, BitString, HashSpec, matvec
from .errors import SiqkdError
from .protocol import TOY_SETTINGS, SessionConfig, run_alice, run_bob, run_session, toy_config
from .sampling import RngStream, estimate_chsh
from .toner_bacon import tb_chsh_estimate
from .transport import EveStrategy

SQRT2 = math.sqrt(2.0)
NAMED_AXES = {
    "x": X_AXIS,
    "y": Y_AXIS,
    "z": Z_AXIS,
    "zpx": (Z_AXIS + X_AXIS) / SQRT2,
    "zmx": (Z_AXIS - X_AXIS) / SQRT2,
}

TOY_EXPECTED = {"u1": "00011", "v1": "110", "w1": "101", "u2": "000", "x2_prime": "110"}


def _default_seed() -> int:
    return int(os.environ.get("SIQKD_SEED", "0"))


def parse_axis(text: str) -> BlochVector:
    """Named axis (optionally negated) or ``theta,phi`` in radians."""
    t = text.strip().lower()
    sign = 1.0
    if t.startswith("-") and t[1:] in NAMED_AXES:
        sign, t = -1.0, t[1:]
    if t in NAMED_AXES:
        return NAMED_AXES[t] * sign
    try:
        theta, phi = (float(p) for p in t.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad axis {text!r}: use x, y, z, zpx, zmx or theta,phi") from None
    return BlochVector.from_angles(theta, phi)


def parse_state(text: str) -> EnsembleState:
    """``mixed``, a named axis / ``theta,phi`` (pure state), or ``x,y,z``."""
    t = text.strip().lower()
    try:
        if t == "mixed":
            return EnsembleState(ORIGIN)
        parts = t.split(",")
        if len(parts) == 3:
            return EnsembleState(BlochVector(*(float(p) for p in parts)))
        return EnsembleState(parse_axis(t))
    except (ValueError, SiqkdError) as exc:
        raise argparse.ArgumentTypeError(f"bad state {text!r}: {exc}") from None


def parse_eve(text: str) -> EveStrategy:
    t = text.strip().lower()
    if t == "none":
        return EveStrategy.none()
    if t.startswith("intercept:"):
        spec = t.split(":", 1)[1]
        if spec == "random":
            return EveStrategy.intercept_random()
        return EveStrategy.intercept(Observable(parse_axis(spec), "E"))
    raise argparse.ArgumentTypeError(f"bad eve strategy {text!r}: use none, intercept:AXIS or intercept:random")


def parse_bits(text: str) -> BitString:
    try:
        return BitString(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def parse_hostport(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


def _settings_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--a1", type=parse_axis, default=TOY_SETTINGS.a1.axis)
    p.add_argument("--a2", type=parse_axis, default=TOY_SETTINGS.a2.axis)
    p.add_argument("--b1", type=parse_axis, default=TOY_SETTINGS.b1.axis)
    p.add_argument("--b2", type=parse_axis, default=TOY_SETTINGS.b2.axis)


def _settings(ns) -> MeasurementSettings:
    return MeasurementSettings(
        Observable(ns.a1, "A1"), Observable(ns.a2, "A2"), Observable(ns.b1, "B1"), Observable(ns.b2, "B2")
    )


def _session_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, default=16, help="qubit ensembles per session")
    p.add_argument("--k", type=int, default=4, help="check ensembles (1 <= k < n)")
    p.add_argument("--shots", type=int, default=100_000, help="shots per ensemble")
    p.add_argument("--seed", type=int, default=None, help="master seed (default $SIQKD_SEED or 0)")
    p.add_argument("--eve", type=parse_eve, default=EveStrategy.none())
    p.add_argument("--threshold", type=float, default=2.0)
    p.add_argument("--state", type=parse_state, default=EnsembleState(ORIGIN))
    p.add_argument("--matrix-file", default=None, help="reconciliation matrix, 'rows cols' then 0/1 rows")
    p.add_argument("--hash-out", type=int, default=None, help="final key length (default n-k)")
    p.add_argument("--report-path", default=None, help="append JSON lines here instead of stdout")
    _settings_args(p)


def _load_matrix(parser, path):
    if path is None:
        return None
    try:
        return BinaryMatrix.load(path)
    except (OSError, ValueError) as exc:
        parser.error(f"cannot read matrix file {path}: {exc}")


def _config(parser, ns, seed: int, eve: EveStrategy | None = None) -> SessionConfig:
    try:
        m = ns.n - ns.k
        hash_spec = HashSpec(seed, m, ns.hash_out) if ns.hash_out is not None else None
        return SessionConfig(
            n=ns.n,
            k=ns.k,
            shots_per_ensemble=ns.shots,
            settings=_settings(ns),
            threshold=ns.threshold,
            master_seed=seed,
            initial_state=ns.state,
            matrix=_load_matrix(parser, ns.matrix_file),
            hash=hash_spec,
            eve=ns.eve if eve is None else eve,
        )
    except (SiqkdError, ValueError) as exc:
        parser.error(str(exc))


def _emit(lines, path) -> None:
    text = "".join(json.dumps(line) + "\n" for line in lines)
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "a") as fh:
            fh.write(text)


# -- toy -------------------------------------------------------------------------


def cmd_toy(parser, ns) -> int:
    overrides = {}
    if ns.x2 is not None:
        overrides["x2"] = ns.x2
    matrix = _load_matrix(parser, ns.matrix_file)
    if matrix is not None:
        overrides["matrix"] = matrix
    try:
        cfg = toy_config(master_seed=ns.seed if ns.seed is not None else _default_seed(), **overrides)
    except (SiqkdError, ValueError) as exc:
        parser.error(str(exc))
    report = run_session(cfg)
    s = report.strings
    m = cfg.key_length

    rows = [("X1", s["x1"]), ("Y1", s["y1"]), ("X2", s["x2"]), ("U1", s["u1"]),
            ("Alice observables", ",".join("A1" if b == "0" else "A2" for b in s["u1"])),
            ("Bob check observables", ",".join("B1" if b == "0" else "B2" for b in s["y1"][:cfg.k])),
            ("CHSH", f"{report.chsh.value:.6f} +/- {report.chsh.std_error:.6f}"),
            ("aborted", str(report.aborted))]
    if not report.aborted:
        rows += [("Y2", s["y2"]), ("V1", s["v1"]), ("MU1", s["mu1"]), ("W1", s["w1"]), ("U2", s["u2"]),
                 ("X2'", s["x2_prime"]), ("key_A", str(report.key_alice)), ("key_B", str(report.key_bob))]
    rows.append(("key rate", f"{cfg.n - cfg.k}/{cfg.n}"))
    for name, value in rows:
        print(f"{name:>22}  {value}")

    mismatches = []
    if report.aborted:
        mismatches.append("session aborted on the CHSH check")
    else:
        expected_x2p = str(matvec(cfg.matrix, BitString(s["x2"]).tail(m)))
        if s["x2_prime"] != expected_x2p:
            mismatches.append(f"X2' = {s['x2_prime']}, expected M X2 = {expected_x2p}")
        if report.key_alice != report.key_bob:
            mismatches.append(f"keys differ: {report.key_alice} vs {report.key_bob}")
        if not overrides:
            for name, want in TOY_EXPECTED.items():
                if s[name] != want:
                    mismatches.append(f"{name.upper()} = {s[name]}, expected {want}")
    if report.ideal_key_rate != 3 / 5:
        mismatches.append(f"key rate {report.ideal_key_rate}, expected 3/5")
    for line in mismatches:
        print(f"MISMATCH {line}", file=sys.stderr)
    print("toy example: " + ("OK" if not mismatches else "FAILED"))
    return 0 if not mismatches else 1


# -- run / sweep -----------------------------------------------------------------


def cmd_run(parser, ns) -> int:
    seed = ns.seed if ns.seed is not None else _default_seed()
    cfg = _config(parser, ns, seed)
    if ns.role == "both":
        if ns.listen or ns.connect:
            parser.error("--listen/--connect need --role alice or --role bob")
        report = run_session(cfg)
    else:
        if bool(ns.listen) == bool(ns.connect):
            parser.error(f"--role {ns.role} needs exactly one of --listen or --connect")
        sock = _open_socket(ns.listen, ns.connect, ns.timeout)
        try:
            report = (run_alice if ns.role == "alice" else run_bob)(sock, cfg)
        finally:
            sock.close()
    _emit([report.to_json()], ns.report_path)
    return 0


def _open_socket(listen, connect, timeout):
    if listen:
        with socket.create_server(listen) as server:
            server.settimeout(timeout)
            conn, _ = server.accept()
        conn.settimeout(timeout)
        return conn
    deadline = time.monotonic() + timeout
    while True:
        try:
            return socket.create_connection(connect, timeout=timeout)
        except ConnectionRefusedError:
            # the listening peer may not be up yet
            if time.monotonic() > deadline:
                raise
            time.sleep(0.05)


def _sweep_one(cfg: SessionConfig) -> dict:
    out = run_session(cfg).to_json()
    out["transcript"] = None
    return out


def cmd_sweep(parser, ns) -> int:
    base = ns.seed if ns.seed is not None else _default_seed()
    seeds = RngStream(base, "sweep").generator.integers(0, 2**63, size=ns.sessions, dtype=np.uint64)
    configs = [_config(parser, ns, int(s), eve) for eve in ns.eves for s in seeds]
    if ns.workers > 1:
        with ProcessPoolExecutor(ns.workers) as pool:
            for line in pool.map(_sweep_one, configs):
                _emit([line], ns.report_path)
    else:
        for cfg in configs:
            _emit([_sweep_one(cfg)], ns.report_path)
    return 0


# -- chsh / tb tables ------------------------------------------------------------


def _angle_sets(ns):
    """The configured settings, or b2 rotated away from b1 by angles in [0, pi].

    The rotation stays in the plane of b1 and the configured b2, so the sweep
    passes through b1 (angle 0) and the direction orthogonal to it (pi/2).
    """
    settings = _settings(ns)
    if not ns.sweep_b2:
        return [settings]
    b1 = settings.b1.axis
    perp = settings.b2.axis - b1 * b1.dot(settings.b2.axis)
    if perp.norm() < 1e-9:
        perp = X_AXIS - b1 * b1.x if abs(b1.x) < 0.9 else Y_AXIS - b1 * b1.y
    perp = perp / perp.norm()
    out = []
    for theta in np.linspace(0.0, math.pi, ns.sweep_b2):
        b2 = Observable(b1 * math.cos(theta) + perp * math.sin(theta), "B2")
        out.append(MeasurementSettings(settings.a1, settings.a2, settings.b1, b2))
    return out


def _angle_cols(s: MeasurementSettings) -> list[str]:
    cols = []
    for obs in (s.a1, s.a2, s.b1, s.b2):
        cols += [f"{a:.6f}" for a in obs.axis.angles()]
    gap = math.acos(max(-1.0, min(1.0, s.b1.axis.dot(s.b2.axis))))
    return cols + [f"{gap:.6f}"]


ANGLE_HEADER = [f"{n}_{c}" for n in ("a1", "a2", "b1", "b2") for c in ("theta", "phi")] + ["b1_b2_angle"]


def cmd_chsh(parser, ns) -> int:
    seed = ns.seed if ns.seed is not None else _default_seed()
    state = ns.state
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(ANGLE_HEADER + ["analytic", "sampled", "stderr"])
    for idx, s in enumerate(_angle_sets(ns)):
        est = estimate_chsh(state, s, ns.shots, RngStream(seed, "chsh").split(idx))
        w.writerow(_angle_cols(s) + [f"{chsh_value(s).value:.6f}", f"{est.value:.6f}", f"{est.std_error:.6f}"])
    return 0


def cmd_tb(parser, ns) -> int:
    seed = ns.seed if ns.seed is not None else _default_seed()
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(ANGLE_HEADER + ["analytic", "tb_value", "tb_stderr", "bits"])
    for idx, s in enumerate(_angle_sets(ns)):
        est, bits = tb_chsh_estimate(s, ns.rounds, RngStream(seed, "tb").split(idx))
        w.writerow(_angle_cols(s) + [f"{chsh_value(s).value:.6f}", f"{est.value:.6f}",
                                     f"{est.std_error:.6f}", str(bits)])
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="siqkd", description="State-independent QKD simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toy", help="replay the five-qubit worked example and check every string")
    p.add_argument("--x2", type=parse_bits, default=None)
    p.add_argument("--matrix-file", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser("run", help="run one session (in-process or one role over TCP)")
    _session_args(p)
    p.add_argument("--role", choices=("both", "alice", "bob"), default="both")
    p.add_argument("--listen", type=parse_hostport, default=None, metavar="HOST:PORT")
    p.add_argument("--connect", type=parse_hostport, default=None, metavar="HOST:PORT")
    p.add_argument("--timeout", type=float, default=60.0)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="many seeded sessions, one JSON line each")
    _session_args(p)
    p.add_argument("--sessions", type=int, default=10)
    p.add_argument("--eves", type=lambda t: [parse_eve(e) for e in t.split(";")], default=None,
                   help="';'-separated Eve strategies (default: --eve)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    for name, func, count_flag in (("chsh", cmd_chsh, "--shots"), ("tb", cmd_tb, "--rounds")):
        p = sub.add_parser(name, help="CSV table of the CHSH statistic" if name == "chsh"
                           else "CSV table of the 1-bit classical simulation")
        _settings_args(p)
        p.add_argument(count_flag, type=int, default=100_000)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--sweep-b2", type=int, default=0, metavar="POINTS",
                       help="sweep b2 over [0, pi] in the x-z plane")
        if name == "chsh":
            p.add_argument("--state", type=parse_state, default=EnsembleState(ORIGIN))
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if getattr(ns, "eves", "absent") is None:
        ns.eves = [ns.eve]
    for flag in ("shots", "rounds", "sessions", "workers"):
        if getattr(ns, flag, 1) < 1:
            parser.error(f"--{flag} must be positive")
    try:
        return ns.func(parser, ns)
    except argparse.ArgumentTypeError as exc:
        parser.error(str(exc))


if __name__ == "__main__":
    sys.exit(main())
