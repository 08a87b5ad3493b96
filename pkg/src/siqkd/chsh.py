"""Analytic temporal correlators and the temporal Bell-CHSH statistic."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .bloch import (
    UNIT_TOL,
    BlochVector,
    EnsembleState,
    Observable,
    Rotation,
    apply_rotation,
    conditional_probability,
    outcome_probability,
)
from .errors import DegenerateSettingsError, InvalidObservableError

CLASSICAL_BOUND = 2.0
TSIRELSON_BOUND = 2.0 * math.sqrt(2.0)

# CHSH sign pattern for (a1,b1), (a1,b2), (a2,b1), (a2,b2)
CHSH_SIGNS = {(0, 0): 1, (0, 1): 1, (1, 0): 1, (1, 1): -1}


@dataclass(frozen=True)
class MeasurementSettings:
    a1: Observable
    a2: Observable
    b1: Observable
    b2: Observable

    def alice(self, i: int) -> Observable:
        return (self.a1, self.a2)[i]

    def bob(self, j: int) -> Observable:
        return (self.b1, self.b2)[j]

    def pairs(self):
        """Yield ((i, j), sign, a_i, b_j) for the four terms of the statistic."""
        for (i, j), sign in CHSH_SIGNS.items():
            yield (i, j), sign, self.alice(i), self.bob(j)


@dataclass(frozen=True)
class ChshValue:
    value: float
    classical_bound: float = CLASSICAL_BOUND
    tsirelson_bound: float = TSIRELSON_BOUND

    @property
    def violates(self) -> bool:
        return self.value > self.classical_bound


def correlator(a: Observable, b: Observable, dynamics: Rotation | None = None) -> float:
    """Two-time correlator R(a).b; plain a.b without dynamics."""
    axis = a.axis if dynamics is None else apply_rotation(dynamics, a.axis)
    return axis.dot(b.axis)


def correlator_from_state(state: EnsembleState, a: Observable, b: Observable) -> float:
    """Evaluate sum_{k,l} k l Tr[rho Pi_a^k] Tr[Pi_a^k Pi_b^l] term by term.

    The result does not depend on ``state``; this is the slow literal route kept
    to demonstrate that.
    """
    total = 0.0
    for k in (1, -1):
        pk = outcome_probability(state, a, k)
        for l in (1, -1):
            total += k * l * pk * conditional_probability(a, k, b, l)
    return total


def correlator_three(a: Observable, b: Observable, c: Observable) -> float:
    """First-to-third correlator of three sequential measurements: (a.b)(b.c)."""
    return a.axis.dot(b.axis) * b.axis.dot(c.axis)


def chsh_value(settings: MeasurementSettings, dynamics: Rotation | None = None) -> ChshValue:
    total = sum(sign * correlator(a, b, dynamics) for _, sign, a, b in settings.pairs())
    return ChshValue(abs(total))


def optimal_settings(b1: Observable, b2: Observable) -> MeasurementSettings:
    """Alice's axes (b1 +/- b2)/sqrt(2) that saturate the Tsirelson bound.

    Only defined for orthogonal ``b1`` and ``b2``; anything else would give
    non-unit axes.
    """
    if abs(b1.axis.dot(b2.axis)) > UNIT_TOL:
        raise DegenerateSettingsError(
            f"b1 and b2 must be orthogonal, got b1.b2 = {b1.axis.dot(b2.axis):.3g}"
        )
    s = math.sqrt(2.0)
    a1 = Observable((b1.axis + b2.axis) / s, "A1")
    a2 = Observable((b1.axis - b2.axis) / s, "A2")
    return MeasurementSettings(a1, a2, b1, b2)


def chsh_with_intercept(settings: MeasurementSettings, e: Observable) -> float:
    """CHSH statistic when every qubit is measured along ``e`` between Alice and Bob."""
    total = sum(sign * correlator_three(a, e, b) for _, sign, a, b in settings.pairs())
    return abs(total)


def pseudo_projection_trace(p: BlochVector, b: BlochVector, c: BlochVector) -> float:
    """Trace of the symmetrised projector product: (1 + p.(b+c) + b.c)/4.

    Normalised as (1/16) Tr[(I+s.p)(I+s.b)(I+s.c) + (I+s.c)(I+s.b)(I+s.p)].
    """
    for v in (p, b, c):
        if abs(v.norm() - 1.0) > UNIT_TOL:
            raise InvalidObservableError("pseudo-projection inputs must be unit vectors")
    return 0.25 * (1.0 + p.dot(b + c) + b.dot(c))


def derived_chsh_expression(b1: BlochVector, b2: BlochVector, c1: BlochVector, c2: BlochVector) -> float:
    """b1.(c1+c2) + b2.(c1-c2), the left side of the bound derived from the trace."""
    return b1.dot(c1 + c2) + b2.dot(c1 - c2)
