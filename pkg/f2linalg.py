"""
Linear algebra over F2.

Bit vectors are stored as Python integers: bit i of the integer is entry i of
the vector. Python integers are packed machine words internally, so XOR, AND
and popcount (`int.bit_count`) run word-at-a-time without per-bit loops.
Matrices are tuples of row integers with an optional column mirror built on
first use.
"""
import logging
from functools import cached_property

import numpy as np

from errors import DimensionMismatchError

logger = logging.getLogger(__name__)


class _Infeasible:
    """Returned by `solve` when the right-hand side is outside the column space."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __bool__(self):
        return False

    def __repr__(self):
        return "INFEASIBLE"


INFEASIBLE = _Infeasible()


def _mask(length):
    return (1 << length) - 1


def _support_of(bits):
    support = []
    while bits:
        low = bits & -bits
        support.append(low.bit_length() - 1)
        bits ^= low
    return support


def _bits_from_array(values):
    arr = np.asarray(values, dtype=np.uint8) & 1
    if arr.size == 0:
        return 0
    packed = np.packbits(arr, bitorder="little")
    return int.from_bytes(packed.tobytes(), "little")


class BitVec:
    """Immutable fixed-length vector over F2."""

    __slots__ = ("length", "bits")

    def __init__(self, length, bits=0):
        if length < 0:
            raise ValueError(f"negative length {length}")
        object.__setattr__(self, "length", int(length))
        object.__setattr__(self, "bits", int(bits) & _mask(length))

    def __setattr__(self, name, value):
        raise AttributeError("BitVec is immutable")

    def __reduce__(self):
        return (BitVec, (self.length, self.bits))

    # --- Constructors ---
    @classmethod
    def zeros(cls, length):
        return cls(length, 0)

    @classmethod
    def ones(cls, length):
        return cls(length, _mask(length))

    @classmethod
    def from_support(cls, length, support):
        bits = 0
        for i in support:
            if not 0 <= i < length:
                raise DimensionMismatchError(f"index {i} outside vector of length {length}")
            bits ^= 1 << int(i)
        return cls(length, bits)

    @classmethod
    def from_string(cls, text):
        """Parse '0101...' with the first character as entry 0."""
        text = text.strip()
        if any(ch not in "01" for ch in text):
            raise ValueError(f"not a bit string: {text!r}")
        return cls(len(text), int(text[::-1], 2) if text else 0)

    @classmethod
    def from_array(cls, values):
        values = np.asarray(values)
        return cls(values.shape[0], _bits_from_array(values))

    @classmethod
    def from_bytes(cls, length, data):
        return cls(length, int.from_bytes(data, "little"))

    # --- Queries ---
    def weight(self):
        return self.bits.bit_count()

    def support(self):
        return _support_of(self.bits)

    def is_zero(self):
        return self.bits == 0

    def to_string(self):
        if self.length == 0:
            return ""
        return format(self.bits, f"0{self.length}b")[::-1]

    def to_array(self):
        out = np.zeros(self.length, dtype=np.uint8)
        out[self.support()] = 1
        return out

    def key(self):
        """Canonical byte form, usable as a dictionary key across processes."""
        return self.bits.to_bytes((self.length + 7) // 8, "little")

    def dot(self, other):
        self._check(other)
        return (self.bits & other.bits).bit_count() & 1

    def flip(self, index):
        if not 0 <= index < self.length:
            raise DimensionMismatchError(f"index {index} outside vector of length {self.length}")
        return BitVec(self.length, self.bits ^ (1 << index))

    def issubset(self, other):
        self._check(other)
        return self.bits & ~other.bits == 0

    def append(self, bit):
        return BitVec(self.length + 1, self.bits | ((bit & 1) << self.length))

    def select(self, indices):
        """Sub-vector at the given positions, in the given order."""
        bits = 0
        for k, i in enumerate(indices):
            if (self.bits >> i) & 1:
                bits |= 1 << k
        return BitVec(len(indices), bits)

    def _check(self, other):
        if self.length != other.length:
            raise DimensionMismatchError(f"length {self.length} vs {other.length}")

    # --- Operators ---
    def __xor__(self, other):
        self._check(other)
        return BitVec(self.length, self.bits ^ other.bits)

    def __and__(self, other):
        self._check(other)
        return BitVec(self.length, self.bits & other.bits)

    def __or__(self, other):
        self._check(other)
        return BitVec(self.length, self.bits | other.bits)

    def __invert__(self):
        return BitVec(self.length, ~self.bits)

    def __getitem__(self, index):
        if not 0 <= index < self.length:
            raise IndexError(index)
        return (self.bits >> index) & 1

    def __len__(self):
        return self.length

    def __eq__(self, other):
        if not isinstance(other, BitVec):
            return NotImplemented
        return self.length == other.length and self.bits == other.bits

    def __lt__(self, other):
        """Order by sorted support, so the smallest is the lexicographically first support."""
        return self.support() < other.support()

    def __hash__(self):
        return hash((self.length, self.bits))

    def __repr__(self):
        return f"BitVec('{self.to_string()}')"


class BitMatrix:
    """Immutable matrix over F2 stored as packed rows."""

    def __init__(self, n_rows, n_cols, rows=()):
        rows = tuple(int(r) & _mask(n_cols) for r in rows)
        if len(rows) != n_rows:
            raise DimensionMismatchError(f"expected {n_rows} rows, got {len(rows)}")
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.rows = rows

    # --- Constructors ---
    @classmethod
    def zeros(cls, n_rows, n_cols):
        return cls(n_rows, n_cols, [0] * n_rows)

    @classmethod
    def identity(cls, n):
        return cls(n, n, [1 << i for i in range(n)])

    @classmethod
    def from_rows(cls, rows, n_cols=None):
        rows = [BitVec.from_string(r) if isinstance(r, str) else r for r in rows]
        if n_cols is None:
            if not rows:
                raise ValueError("column count needed for an empty row list")
            n_cols = rows[0].length
        for r in rows:
            if r.length != n_cols:
                raise DimensionMismatchError(f"row length {r.length} vs {n_cols}")
        return cls(len(rows), n_cols, [r.bits for r in rows])

    @classmethod
    def from_array(cls, values):
        arr = np.atleast_2d(np.asarray(values, dtype=np.uint8))
        return cls(arr.shape[0], arr.shape[1], [_bits_from_array(r) for r in arr])

    @classmethod
    def from_columns(cls, n_rows, columns):
        """Build from column supports (each an iterable of row indices)."""
        rows = [0] * n_rows
        for j, col in enumerate(columns):
            for i in col:
                rows[i] |= 1 << j
        return cls(n_rows, len(columns), rows)

    # --- Access ---
    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    def row(self, i):
        return BitVec(self.n_cols, self.rows[i])

    @cached_property
    def column_bits(self):
        """Column-major mirror: entry j is column j packed over rows."""
        cols = [0] * self.n_cols
        for i, r in enumerate(self.rows):
            for j in _support_of(r):
                cols[j] |= 1 << i
        return tuple(cols)

    def column(self, j):
        return BitVec(self.n_rows, self.column_bits[j])

    @cached_property
    def column_supports(self):
        return tuple(tuple(_support_of(c)) for c in self.column_bits)

    @cached_property
    def row_supports(self):
        return tuple(tuple(_support_of(r)) for r in self.rows)

    def to_array(self):
        out = np.zeros(self.shape, dtype=np.uint8)
        for i, r in enumerate(self.rows):
            out[i, _support_of(r)] = 1
        return out

    def transpose(self):
        return BitMatrix(self.n_cols, self.n_rows, self.column_bits)

    def is_zero(self):
        return not any(self.rows)

    # --- Structural edits ---
    def vstack(self, other):
        if other.n_cols != self.n_cols:
            raise DimensionMismatchError(f"column count {other.n_cols} vs {self.n_cols}")
        return BitMatrix(self.n_rows + other.n_rows, self.n_cols, self.rows + other.rows)

    def append_row(self, v):
        if v.length != self.n_cols:
            raise DimensionMismatchError(f"row length {v.length} vs {self.n_cols}")
        return BitMatrix(self.n_rows + 1, self.n_cols, self.rows + (v.bits,))

    def select_rows(self, indices):
        return BitMatrix(len(indices), self.n_cols, [self.rows[i] for i in indices])

    def select_columns(self, indices):
        cols = self.column_bits
        return BitMatrix.from_columns(self.n_rows, [_support_of(cols[j]) for j in indices])

    def permute_columns(self, perm):
        """Column perm[j] of self becomes column j of the result."""
        return self.select_columns(perm)

    def __eq__(self, other):
        if not isinstance(other, BitMatrix):
            return NotImplemented
        return self.shape == other.shape and self.rows == other.rows

    def __hash__(self):
        return hash((self.n_rows, self.n_cols, self.rows))

    def __repr__(self):
        return f"BitMatrix({self.n_rows}x{self.n_cols})"


# --- Operations ---

def mat_vec_mul(m, v):
    """Return m·v; bit i is the parity of row i AND v."""
    if v.length != m.n_cols:
        raise DimensionMismatchError(f"vector length {v.length} vs matrix columns {m.n_cols}")
    x = v.bits
    out = 0
    for i, r in enumerate(m.rows):
        if (r & x).bit_count() & 1:
            out |= 1 << i
    return BitVec(m.n_rows, out)


def syndrome_of_support(m, support):
    """XOR of the listed columns; fast path for sparse vectors."""
    cols = m.column_bits
    s = 0
    for j in support:
        s ^= cols[j]
    return BitVec(m.n_rows, s)


class RowReduction:
    """
    Reduced row echelon form of a matrix together with the row transform.

    `transform` rows combine original rows: reduced[i] = XOR of m.rows[k] over
    k in transform[i]. Pivots are taken at the lowest available column.
    """

    def __init__(self, m):
        self.n_rows = m.n_rows
        self.n_cols = m.n_cols
        rows = list(m.rows)
        trans = [1 << i for i in range(m.n_rows)]
        pivots = []
        rank = 0
        for col in range(m.n_cols):
            bit = 1 << col
            pivot = None
            for i in range(rank, len(rows)):
                if rows[i] & bit:
                    pivot = i
                    break
            if pivot is None:
                continue
            rows[rank], rows[pivot] = rows[pivot], rows[rank]
            trans[rank], trans[pivot] = trans[pivot], trans[rank]
            for i in range(len(rows)):
                if i != rank and rows[i] & bit:
                    rows[i] ^= rows[rank]
                    trans[i] ^= trans[rank]
            pivots.append(col)
            rank += 1
            if rank == len(rows):
                break
        self.rows = rows
        self.transform = trans
        self.pivots = pivots
        self.rank = rank

    @property
    def reduced(self):
        return BitMatrix(self.n_rows, self.n_cols, self.rows)

    def solve(self, rhs):
        if rhs.length != self.n_rows:
            raise DimensionMismatchError(f"rhs length {rhs.length} vs matrix rows {self.n_rows}")
        b = rhs.bits
        t = [(tr & b).bit_count() & 1 for tr in self.transform]
        if any(t[self.rank:]):
            return INFEASIBLE
        x = 0
        for i, col in enumerate(self.pivots):
            if t[i]:
                x |= 1 << col
        return BitVec(self.n_cols, x)

    def is_feasible(self, rhs):
        b = rhs.bits
        return not any((tr & b).bit_count() & 1 for tr in self.transform[self.rank:])

    def kernel_basis(self):
        pivot_set = set(self.pivots)
        basis = []
        for free in range(self.n_cols):
            if free in pivot_set:
                continue
            x = 1 << free
            for i, col in enumerate(self.pivots):
                if (self.rows[i] >> free) & 1:
                    x |= 1 << col
            basis.append(BitVec(self.n_cols, x))
        return basis


def row_reduce(m):
    """Return (reduced, rank, pivot_cols) in reduced row echelon form."""
    rr = RowReduction(m)
    return rr.reduced, rr.rank, list(rr.pivots)


def rank(m):
    return RowReduction(m).rank


def solve(m, rhs):
    """Any x with m·x = rhs, or INFEASIBLE."""
    return RowReduction(m).solve(rhs)


def kernel_basis(m):
    return RowReduction(m).kernel_basis()


def in_rowspace(m, v):
    """True when v is a combination of the rows of m."""
    if v.length != m.n_cols:
        raise DimensionMismatchError(f"vector length {v.length} vs matrix columns {m.n_cols}")
    return rank(m.append_row(v)) == rank(m)


def sample_rowspace(m, rng):
    """Uniform random element of the row space of m."""
    if m.is_zero():
        raise ValueError("row space of a zero matrix has a single element; nothing to sample")
    rr = RowReduction(m)
    coeffs = rng.integers(0, 2, size=rr.rank)
    out = 0
    for c, r in zip(coeffs, rr.rows[:rr.rank]):
        if c:
            out ^= r
    return BitVec(m.n_cols, out)


def random_vector(length, rng, nonzero=False):
    while True:
        bits = _bits_from_array(rng.integers(0, 2, size=length))
        if bits or not nonzero or length == 0:
            return BitVec(length, bits)
