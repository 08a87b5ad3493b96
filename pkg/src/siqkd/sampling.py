"""Finite-shot Monte-Carlo of sequential measurements on qubit ensembles."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .bloch import EnsembleState, Observable
from .chsh import MeasurementSettings

UINT64_MASK = (1 << 64) - 1


@dataclass
class RngStream:
    """Labelled, counter-based random stream.

    The Philox key is a hash of ``(seed, label)``, so every party of a session
    can derive its own independent stream from one master seed, and the same
    pair always replays the same numbers.
    """

    seed: int
    label: str = ""
    _gen: np.random.Generator | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0 <= self.seed <= UINT64_MASK:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            digest = hashlib.sha256(f"{self.seed}:{self.label}".encode()).digest()
            key = np.frombuffer(digest[:16], dtype="<u8")
            self._gen = np.random.Generator(np.random.Philox(key=key))
        return self._gen

    def child(self, label: str) -> RngStream:
        return RngStream(self.seed, f"{self.label}/{label}" if self.label else label)

    def split(self, index: int) -> RngStream:
        """Stream for one shot or work item, independent of evaluation order."""
        return self.child(f"#{index}")

    def random(self, size=None):
        return self.generator.random(size)

    def binomial(self, n: int, p: float) -> int:
        if n == 0:
            return 0
        return int(self.generator.binomial(n, min(1.0, max(0.0, p))))

    def unit_vectors(self, size: int) -> np.ndarray:
        """``size`` points uniform on the unit sphere, shape (size, 3)."""
        v = self.generator.standard_normal((size, 3))
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    def bits(self, size: int) -> np.ndarray:
        return self.generator.integers(0, 2, size=size, dtype=np.uint8)


@dataclass(frozen=True)
class CorrelatorEstimate:
    mean: float
    std_error: float
    shots: int


@dataclass(frozen=True)
class ChshEstimate:
    value: float
    std_error: float
    per_term: tuple[CorrelatorEstimate, CorrelatorEstimate, CorrelatorEstimate, CorrelatorEstimate]


def estimate_from_products(products: np.ndarray) -> CorrelatorEstimate:
    """Mean and standard error of an array of +/-1 products."""
    n = int(products.size)
    mean = float(products.mean())
    if n > 1:
        se = float(products.std(ddof=1)) / math.sqrt(n)
    else:
        se = 0.0
    return CorrelatorEstimate(mean, se, n)


def estimate_from_counts(agree: int, total: int) -> CorrelatorEstimate:
    """Same estimate as :func:`estimate_from_products`, from the number of +1 products."""
    if total <= 0:
        raise ValueError("no shots to estimate from")
    mean = (2 * agree - total) / total
    if total > 1:
        var = max(0.0, (1.0 - mean * mean) * total / (total - 1))
        se = math.sqrt(var / total)
    else:
        se = 0.0
    return CorrelatorEstimate(mean, se, total)


def combine_chsh(terms) -> ChshEstimate:
    """Statistic from four term estimates ordered (a1b1, a1b2, a2b1, a2b2)."""
    terms = tuple(terms)
    signs = (1, 1, 1, -1)
    value = abs(sum(s * t.mean for s, t in zip(signs, terms)))
    se = math.sqrt(sum(t.std_error ** 2 for t in terms))
    return ChshEstimate(value, se, terms)


def sample_sequences(
    state: EnsembleState, observables: list[Observable], shots: int, rng: RngStream
) -> np.ndarray:
    """Outcomes of ``shots`` independent measurement chains, shape (shots, len(observables)).

    The first outcome follows Tr[rho Pi^k]; each later one depends only on the
    previous observable and outcome, because the state has collapsed.
    """
    if not observables:
        raise ValueError("need at least one observable")
    if shots < 1:
        raise ValueError("shots must be positive")
    out = np.empty((shots, len(observables)), dtype=np.int8)
    u = rng.random((shots, len(observables)))
    p_plus = 0.5 * (1.0 + observables[0].axis.dot(state.r))
    out[:, 0] = np.where(u[:, 0] < p_plus, 1, -1)
    for m in range(1, len(observables)):
        overlap = observables[m - 1].axis.dot(observables[m].axis)
        p_plus = 0.5 * (1.0 + out[:, m - 1] * overlap)
        out[:, m] = np.where(u[:, m] < p_plus, 1, -1)
    return out


def sample_sequence(state: EnsembleState, observables: list[Observable], rng: RngStream) -> list[int]:
    """One shot of the measurement chain."""
    return [int(k) for k in sample_sequences(state, observables, 1, rng)[0]]


def estimate_correlator(
    state: EnsembleState, a: Observable, b: Observable, shots: int, rng: RngStream
) -> CorrelatorEstimate:
    if shots < 1:
        raise ValueError("shots must be positive")
    seq = sample_sequences(state, [a, b], shots, rng)
    return estimate_from_products(seq[:, 0].astype(np.int64) * seq[:, 1])


def estimate_chain_correlator(
    state: EnsembleState, observables: list[Observable], shots: int, rng: RngStream
) -> CorrelatorEstimate:
    """First-to-last correlator of a measurement chain."""
    seq = sample_sequences(state, observables, shots, rng)
    return estimate_from_products(seq[:, 0].astype(np.int64) * seq[:, -1])


def estimate_chsh(
    state: EnsembleState,
    settings: MeasurementSettings,
    shots_per_term: int,
    rng: RngStream,
    intercept: Observable | None = None,
) -> ChshEstimate:
    """Four independent correlator estimates combined into the CHSH statistic.

    With ``intercept`` set, every shot is measured along that axis between
    Alice's and Bob's measurements.
    """
    if shots_per_term < 1:
        raise ValueError("shots_per_term must be positive")
    terms = []
    for (i, j), _, a, b in settings.pairs():
        chain = [a, b] if intercept is None else [a, intercept, b]
        terms.append(estimate_chain_correlator(state, chain, shots_per_term, rng.child(f"term{i}{j}")))
    return combine_chsh(terms)
