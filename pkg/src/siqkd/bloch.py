"""Bloch-sphere representation of qubit ensembles and dichotomic observables.

Everything is expressed through real 3-vectors: a state rho = (I + sigma.r)/2 is
its Bloch vector ``r``, an observable sigma.a is its unit axis ``a``.  Outcomes
are the integers +1 and -1 throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidObservableError, InvalidRotationError, InvalidStateError

UNIT_TOL = 1e-9


@dataclass(frozen=True)
class BlochVector:
    x: float
    y: float
    z: float

    def __post_init__(self):
        for c in (self.x, self.y, self.z):
            if not math.isfinite(c):
                raise ValueError(f"non-finite Bloch component: {c!r}")
        # normalise numpy scalars so equality and hashing behave
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "z", float(self.z))

    @classmethod
    def from_array(cls, v) -> BlochVector:
        x, y, z = np.asarray(v, dtype=float).reshape(3)
        return cls(x, y, z)

    @classmethod
    def from_angles(cls, theta: float, phi: float) -> BlochVector:
        """Unit vector at polar angle ``theta`` and azimuth ``phi`` (radians)."""
        st = math.sin(theta)
        return cls(st * math.cos(phi), st * math.sin(phi), math.cos(theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def dot(self, other: BlochVector) -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def norm(self) -> float:
        return math.sqrt(self.dot(self))

    def angles(self) -> tuple[float, float]:
        """(theta, phi) of the direction; (0, 0) for the zero vector."""
        r = self.norm()
        if r == 0.0:
            return 0.0, 0.0
        theta = math.acos(max(-1.0, min(1.0, self.z / r)))
        return theta, math.atan2(self.y, self.x)

    def __add__(self, other: BlochVector) -> BlochVector:
        return BlochVector(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: BlochVector) -> BlochVector:
        return BlochVector(self.x - other.x, self.y - other.y, self.z - other.z)

    def __neg__(self) -> BlochVector:
        return BlochVector(-self.x, -self.y, -self.z)

    def __mul__(self, s: float) -> BlochVector:
        return BlochVector(s * self.x, s * self.y, s * self.z)

    __rmul__ = __mul__

    def __truediv__(self, s: float) -> BlochVector:
        return BlochVector(self.x / s, self.y / s, self.z / s)


X_AXIS = BlochVector(1.0, 0.0, 0.0)
Y_AXIS = BlochVector(0.0, 1.0, 0.0)
Z_AXIS = BlochVector(0.0, 0.0, 1.0)
ORIGIN = BlochVector(0.0, 0.0, 0.0)


def _check_unit(v: BlochVector, what: str = "observable axis") -> None:
    if abs(v.norm() - 1.0) > UNIT_TOL:
        raise InvalidObservableError(f"{what} must be unit norm, got |v| = {v.norm():.12g}")


def _check_outcome(k: int) -> None:
    if k not in (1, -1):
        raise ValueError(f"outcome must be +1 or -1, got {k!r}")


@dataclass(frozen=True)
class EnsembleState:
    """Qubit ensemble with density operator (I + sigma.r)/2."""

    r: BlochVector = ORIGIN

    def __post_init__(self):
        if self.r.norm() > 1.0 + UNIT_TOL:
            raise InvalidStateError(f"Bloch vector outside the ball: |r| = {self.r.norm():.12g}")

    @property
    def is_pure(self) -> bool:
        return abs(self.r.norm() - 1.0) <= UNIT_TOL


FULLY_MIXED = EnsembleState(ORIGIN)


@dataclass(frozen=True)
class Observable:
    """Dichotomic observable sigma.axis with outcomes +1/-1."""

    axis: BlochVector
    label: str = field(default="", compare=False)

    def __post_init__(self):
        _check_unit(self.axis)


@dataclass(frozen=True)
class Rotation:
    """Proper rotation in SO(3), acting on Bloch vectors."""

    matrix: tuple[tuple[float, ...], ...]

    def __init__(self, matrix):
        m = np.asarray(matrix, dtype=float)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise InvalidRotationError("rotation must be a finite 3x3 matrix")
        if not np.allclose(m @ m.T, np.eye(3), rtol=0.0, atol=UNIT_TOL):
            raise InvalidRotationError("rotation matrix is not orthogonal")
        if abs(np.linalg.det(m) - 1.0) > UNIT_TOL:
            raise InvalidRotationError("rotation matrix must have determinant +1")
        object.__setattr__(self, "matrix", tuple(tuple(float(c) for c in row) for row in m))

    @classmethod
    def identity(cls) -> Rotation:
        return cls(np.eye(3))

    @classmethod
    def about_axis(cls, axis: BlochVector, angle: float) -> Rotation:
        """Right-handed rotation by ``angle`` about unit ``axis`` (Rodrigues)."""
        _check_unit(axis, "rotation axis")
        u = axis.as_array()
        cross = np.array([[0.0, -u[2], u[1]], [u[2], 0.0, -u[0]], [-u[1], u[0], 0.0]])
        m = np.cos(angle) * np.eye(3) + np.sin(angle) * cross + (1 - np.cos(angle)) * np.outer(u, u)
        return cls(m)

    def as_array(self) -> np.ndarray:
        return np.array(self.matrix)


def outcome_probability(state: EnsembleState, obs: Observable, k: int) -> float:
    """Tr[rho Pi^k] = (1 + k a.r)/2."""
    _check_unit(obs.axis)
    _check_outcome(k)
    return _clip01(0.5 * (1.0 + k * obs.axis.dot(state.r)))


def conditional_probability(prev_obs: Observable, prev_k: int, next_obs: Observable, l: int) -> float:
    """Probability of outcome ``l`` for ``next_obs`` right after ``prev_obs`` gave ``prev_k``.

    Equals Tr[Pi_A^k Pi_B^l] = (1 + k l a.b)/2, which is symmetric under swapping
    the two measurements.
    """
    _check_unit(prev_obs.axis)
    _check_unit(next_obs.axis)
    _check_outcome(prev_k)
    _check_outcome(l)
    return _clip01(0.5 * (1.0 + prev_k * l * prev_obs.axis.dot(next_obs.axis)))


def collapse(obs: Observable, k: int) -> EnsembleState:
    """Post-measurement state: the eigenstate k * axis."""
    _check_unit(obs.axis)
    _check_outcome(k)
    return EnsembleState(obs.axis * k)


def apply_rotation(R: Rotation, v: BlochVector) -> BlochVector:
    if not isinstance(R, Rotation):
        R = Rotation(R)
    return BlochVector.from_array(R.as_array() @ v.as_array())


def _clip01(p: float) -> float:
    # guards rounding in 1 + a.b for |a.b| a hair above 1
    return min(1.0, max(0.0, p))
