"""Toner-Bacon classical simulation of the temporal correlator.

Two parties share two random unit vectors and exchange a single bit per round.
The outputs reproduce E[alpha * beta] = a.b, the same value the sequential
quantum measurements give, so a CHSH violation alone says nothing about
non-classicality.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bloch import BlochVector, Observable
from .chsh import MeasurementSettings
from .sampling import RngStream, combine_chsh, estimate_from_products

# beta is not negated, unlike the singlet version of the protocol, so the
# simulated correlator is +a.b
BETA_SIGN = 1


def _sgn(x):
    # sgn(0) = +1; a measure-zero event, fixed for determinism
    return np.where(x >= 0, 1, -1).astype(np.int8)


@dataclass(frozen=True)
class TbRound:
    lambda1: BlochVector
    lambda2: BlochVector
    comm_bit: int
    alpha: int
    beta: int


@dataclass(frozen=True)
class TbEstimate:
    mean: float
    std_error: float
    rounds: int
    bits_communicated: int


def _rounds(a: np.ndarray, b: np.ndarray, lam1: np.ndarray, lam2: np.ndarray):
    alpha = _sgn(lam1 @ a)
    comm = alpha * _sgn(lam2 @ a)
    beta = BETA_SIGN * _sgn((lam1 + comm[:, None] * lam2) @ b)
    return alpha, comm, beta


def tb_round(a: Observable, b: Observable, rng: RngStream) -> TbRound:
    lam = rng.unit_vectors(2)
    alpha, comm, beta = _rounds(a.axis.as_array(), b.axis.as_array(), lam[:1], lam[1:])
    return TbRound(
        BlochVector.from_array(lam[0]),
        BlochVector.from_array(lam[1]),
        int(comm[0]),
        int(alpha[0]),
        int(beta[0]),
    )


def tb_correlator(a: Observable, b: Observable, rounds: int, rng: RngStream) -> TbEstimate:
    """Estimate E[alpha * beta] over ``rounds`` independent rounds."""
    if rounds < 1:
        raise ValueError("rounds must be positive")
    lam = rng.unit_vectors(2 * rounds)
    alpha, comm, beta = _rounds(a.axis.as_array(), b.axis.as_array(), lam[:rounds], lam[rounds:])
    est = estimate_from_products(alpha.astype(np.int64) * beta)
    return TbEstimate(est.mean, est.std_error, rounds, int(comm.size))


def tb_chsh_estimate(settings: MeasurementSettings, rounds: int, rng: RngStream):
    """CHSH statistic from four simulated terms; returns (ChshEstimate, bits communicated)."""
    terms, bits = [], 0
    for (i, j), _, a, b in settings.pairs():
        t = tb_correlator(a, b, rounds, rng.child(f"term{i}{j}"))
        terms.append(t)
        bits += t.bits_communicated
    return combine_chsh(terms), bits


def tb_chsh(settings: MeasurementSettings, rounds: int, rng: RngStream) -> float:
    return tb_chsh_estimate(settings, rounds, rng)[0].value


def tb_sequence(observables: list[Observable], rounds: int, rng: RngStream) -> tuple[np.ndarray, int]:
    """Chain Toner-Bacon stages to mimic m sequential measurements.

    Stage s reuses the previous output as its sender's outcome: the fresh
    shared pair is negated when needed so that sgn(axis . lambda1) matches it,
    which keeps the pair uniformly distributed.  Returns outputs of shape
    (rounds, m) and the number of bits communicated.
    """
    if not observables:
        raise ValueError("need at least one observable")
    if rounds < 1:
        raise ValueError("rounds must be positive")
    m = len(observables)
    out = np.empty((rounds, m), dtype=np.int8)
    first = rng.child("stage0").unit_vectors(rounds)
    out[:, 0] = _sgn(first @ observables[0].axis.as_array())
    bits = 0
    for s in range(1, m):
        prev = observables[s - 1].axis.as_array()
        lam = rng.child(f"stage{s}").unit_vectors(2 * rounds)
        lam1, lam2 = lam[:rounds], lam[rounds:]
        flip = np.where(_sgn(lam1 @ prev) == out[:, s - 1], 1.0, -1.0)[:, None]
        lam1, lam2 = lam1 * flip, lam2 * flip
        _, comm, beta = _rounds(prev, observables[s].axis.as_array(), lam1, lam2)
        out[:, s] = beta
        bits += rounds
    return out, bits
