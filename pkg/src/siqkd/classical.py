"""GF(2) strings and matrices, the public reconciliation rounds, and key hashing.

Bit strings are written most-significant-first, leftmost character = index 1,
matching how strings are printed in the protocol tables.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, SingularMatrixError
from .sampling import RngStream


class BitString:
    """Immutable sequence over GF(2)."""

    __slots__ = ("_bits",)

    def __init__(self, bits=()):
        if isinstance(bits, str):
            if set(bits) - {"0", "1"}:
                raise ValueError(f"bit string may only contain 0 and 1: {bits!r}")
            arr = np.frombuffer(bits.encode(), dtype=np.uint8) - ord("0")
        else:
            arr = np.asarray(bits, dtype=np.int64).reshape(-1)
            if arr.size and ((arr < 0) | (arr > 1)).any():
                raise ValueError("bits must be 0 or 1")
        arr = arr.astype(np.uint8)
        arr.setflags(write=False)
        self._bits = arr

    @classmethod
    def zeros(cls, n: int) -> BitString:
        return cls(np.zeros(n, dtype=np.uint8))

    @classmethod
    def random(cls, n: int, rng) -> BitString:
        return cls(rng.bits(n))

    @classmethod
    def from_bytes(cls, data: bytes, length: int) -> BitString:
        bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
        if bits.size < length:
            raise DimensionError(f"{len(data)} bytes cannot hold {length} bits")
        return cls(bits[:length])

    @property
    def bits(self) -> np.ndarray:
        return self._bits

    def to_bytes(self) -> bytes:
        return np.packbits(self._bits).tobytes()

    def hex(self) -> str:
        return self.to_bytes().hex()

    def tail(self, m: int) -> BitString:
        """Last ``m`` bits."""
        if not 0 <= m <= len(self):
            raise DimensionError(f"cannot take {m} trailing bits of a {len(self)}-bit string")
        return BitString(self._bits[len(self) - m:])

    def head(self, m: int) -> BitString:
        return BitString(self._bits[:m])

    def complement(self) -> BitString:
        return BitString(1 - self._bits)

    def __len__(self):
        return int(self._bits.size)

    def __iter__(self):
        return (int(b) for b in self._bits)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return BitString(self._bits[i])
        return int(self._bits[i])

    def __xor__(self, other: BitString) -> BitString:
        return xor(self, other)

    def __eq__(self, other):
        if isinstance(other, str):
            other = BitString(other)
        if not isinstance(other, BitString):
            return NotImplemented
        return np.array_equal(self._bits, other._bits)

    def __hash__(self):
        return hash(self._bits.tobytes())

    def __str__(self):
        return "".join("1" if b else "0" for b in self._bits)

    def __repr__(self):
        return f"BitString('{self}')"


def xor(x: BitString, y: BitString) -> BitString:
    if len(x) != len(y):
        raise DimensionError(f"cannot xor strings of length {len(x)} and {len(y)}")
    return BitString(x.bits ^ y.bits)


class BinaryMatrix:
    """Dense matrix over GF(2)."""

    __slots__ = ("_a",)

    def __init__(self, entries):
        a = np.asarray(entries, dtype=np.int64)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise DimensionError(f"matrix must be 2-D and non-empty, got shape {a.shape}")
        if ((a < 0) | (a > 1)).any():
            raise ValueError("matrix entries must be 0 or 1")
        a = a.astype(np.uint8)
        a.setflags(write=False)
        self._a = a

    @classmethod
    def identity(cls, n: int) -> BinaryMatrix:
        return cls(np.eye(n, dtype=np.uint8))

    @classmethod
    def zeros(cls, rows: int, cols: int) -> BinaryMatrix:
        return cls(np.zeros((rows, cols), dtype=np.uint8))

    @classmethod
    def random_invertible(cls, n: int, rng) -> BinaryMatrix:
        """Rejection-sample a uniformly random invertible n x n matrix."""
        while True:
            m = cls(rng.generator.integers(0, 2, size=(n, n)))
            if m.is_invertible():
                return m

    @classmethod
    def parse(cls, text: str) -> BinaryMatrix:
        """Parse the text format: ``rows cols`` on the first line, then one line of 0/1 per row."""
        lines = text.splitlines()
        while lines and not lines[-1].strip():
            lines.pop()
        if not lines:
            raise ValueError("empty matrix file")
        header = lines[0].split()
        if len(header) != 2 or not all(h.isdigit() for h in header):
            raise ValueError(f"matrix header must be 'rows cols', got {lines[0]!r}")
        rows, cols = int(header[0]), int(header[1])
        body = lines[1:]
        if len(body) != rows:
            raise ValueError(f"matrix header declares {rows} rows, found {len(body)}")
        entries = []
        for i, line in enumerate(body):
            line = line.rstrip("\r")
            if len(line) != cols or set(line) - {"0", "1"}:
                raise ValueError(f"matrix row {i + 1} must be {cols} characters of 0/1, got {line!r}")
            entries.append([int(ch) for ch in line])
        return cls(entries)

    @classmethod
    def load(cls, path) -> BinaryMatrix:
        return cls.parse(Path(path).read_text())

    def dump(self) -> str:
        rows = ["".join(str(int(v)) for v in row) for row in self._a]
        return f"{self.rows} {self.cols}\n" + "\n".join(rows) + "\n"

    @property
    def entries(self) -> np.ndarray:
        return self._a

    @property
    def rows(self) -> int:
        return self._a.shape[0]

    @property
    def cols(self) -> int:
        return self._a.shape[1]

    @property
    def is_square(self) -> bool:
        return self.rows == self.cols

    def rank(self) -> int:
        return _rref(self._a)[1]

    def is_invertible(self) -> bool:
        return self.is_square and self.rank() == self.rows

    def inverse(self) -> BinaryMatrix:
        if not self.is_square:
            raise SingularMatrixError("only square matrices are invertible")
        n = self.rows
        aug = np.concatenate([self._a, np.eye(n, dtype=np.uint8)], axis=1)
        reduced, rank = _rref(aug, ncols=n)
        if rank < n:
            raise SingularMatrixError("matrix is singular over GF(2)")
        return BinaryMatrix(reduced[:, n:])

    def __matmul__(self, other):
        if isinstance(other, BitString):
            return matvec(self, other)
        if self.cols != other.rows:
            raise DimensionError(f"cannot multiply {self.rows}x{self.cols} by {other.rows}x{other.cols}")
        return BinaryMatrix((self._a.astype(np.int64) @ other._a) & 1)

    def __eq__(self, other):
        if not isinstance(other, BinaryMatrix):
            return NotImplemented
        return np.array_equal(self._a, other._a)

    def __hash__(self):
        return hash((self._a.shape, self._a.tobytes()))

    def __repr__(self):
        return f"BinaryMatrix({self._a.tolist()})"


def _rref(a: np.ndarray, ncols: int | None = None) -> tuple[np.ndarray, int]:
    """Reduced row echelon form over GF(2), pivoting only on the first ``ncols`` columns."""
    a = (np.asarray(a) & 1).astype(np.uint8)
    m = a.shape[0]
    ncols = a.shape[1] if ncols is None else ncols
    r = 0
    for c in range(ncols):
        if r >= m:
            break
        rows = np.nonzero(a[r:, c])[0]
        if rows.size == 0:
            continue
        p = r + int(rows[0])
        if p != r:
            a[[r, p]] = a[[p, r]]
        ones = np.nonzero(a[:, c])[0]
        ones = ones[ones != r]
        if ones.size:
            a[ones] ^= a[r]
        r += 1
    return a, r


def matvec(M: BinaryMatrix, x: BitString) -> BitString:
    if M.cols != len(x):
        raise DimensionError(f"{M.rows}x{M.cols} matrix cannot act on a {len(x)}-bit string")
    return BitString((M.entries.astype(np.int64) @ x.bits) & 1)


# -- reconciliation rounds ----------------------------------------------------


def _check_square_for(M: BinaryMatrix, n: int) -> None:
    if not M.is_square or M.cols != n:
        raise DimensionError(f"reconciliation matrix must be {n}x{n}, got {M.rows}x{M.cols}")


def alice_round(x1: BitString, x2: BitString, M: BinaryMatrix) -> tuple[BitString, BitString]:
    """Return (U1, M U1) with U1 = X1 xor X2."""
    u1 = xor(x1, x2)
    _check_square_for(M, len(u1))
    return u1, matvec(M, u1)


def bob_round(y1: BitString, y2: BitString, mu1: BitString) -> tuple[BitString, BitString]:
    """Return (V1, W1) with V1 = Y1 xor Y2 and W1 = M U1 xor V1."""
    v1 = xor(y1, y2)
    return v1, xor(mu1, v1)


def alice_reply(x1: BitString, w1: BitString, M: BinaryMatrix) -> BitString:
    """U2 = M X1 xor W1."""
    _check_square_for(M, len(x1))
    return xor(matvec(M, x1), w1)


def bob_recover(u2: BitString, v1: BitString) -> BitString:
    """X2' = U2 xor V1, which equals M X2."""
    return xor(u2, v1)


# -- privacy amplification ----------------------------------------------------


@dataclass(frozen=True)
class HashSpec:
    """Seeded Toeplitz hash from ``input_length`` bits to ``output_length`` bits."""

    seed: int
    input_length: int
    output_length: int

    def __post_init__(self):
        if self.input_length < 1 or self.output_length < 1:
            raise ValueError("hash lengths must be positive")
        if self.output_length > self.input_length:
            raise DimensionError(
                f"output length {self.output_length} exceeds input length {self.input_length}"
            )
        if not 0 <= self.seed < 1 << 64:
            raise ValueError("hash seed must be a 64-bit unsigned integer")


def toeplitz_matrix(spec: HashSpec) -> BinaryMatrix:
    """r x n Toeplitz matrix T[i, j] = t[i - j + n - 1] with seeded diagonal bits ``t``."""
    r, n = spec.output_length, spec.input_length
    diag = RngStream(spec.seed, "toeplitz").bits(r + n - 1)
    i = np.arange(r)[:, None]
    j = np.arange(n)[None, :]
    return BinaryMatrix(diag[i - j + n - 1])


def bob_hash_matrix(spec: HashSpec, M: BinaryMatrix | None) -> BinaryMatrix:
    """The composed hash f' = f o M^-1 Bob applies to M X2."""
    H = toeplitz_matrix(spec)
    if M is None:
        return H
    _check_square_for(M, spec.input_length)
    return H @ M.inverse()


def distill_key(spec: HashSpec, x: BitString, M: BinaryMatrix | None = None) -> BitString:
    """Hash ``x`` to the final key.

    Without ``M`` this is Alice's K_A = H x.  With ``M`` the input is taken to be
    Bob's M X2 and the key is H M^-1 x, so both sides agree.
    """
    if len(x) != spec.input_length:
        raise DimensionError(f"hash expects {spec.input_length} bits, got {len(x)}")
    return matvec(bob_hash_matrix(spec, M), x)
