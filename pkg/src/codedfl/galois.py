"""Finite-field arithmetic and linear solving over small Galois fields.

Symbols are plain non-negative integers below the field order; vectors and
matrices are numpy ``int64`` arrays of symbols. A :class:`GaloisField`
instance owns the arithmetic for one field. Two kinds are supported:

* binary extension GF(2^w), w <= 16, with an irreducible reduction
  polynomial (checked exhaustively at construction),
* prime GF(p) for p < 2^31.

All operations are pure and instances are immutable after construction, so
fields and symbol matrices can be shared freely across threads.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "GaloisField",
    "FieldError",
    "ReduciblePolynomialError",
    "CompositeOrderError",
    "RankDeficientError",
    "InconsistentSystemError",
    "DEFAULT_POLYNOMIALS",
]


class FieldError(ValueError):
    """Invalid field parameters."""


class ReduciblePolynomialError(FieldError):
    """The reduction polynomial factors over GF(2)."""


class CompositeOrderError(FieldError):
    """Requested order is neither prime nor a supported power of two."""


class RankDeficientError(ArithmeticError):
    """The system matrix has fewer independent equations than unknowns."""

    def __init__(self, rank: int, needed: int):
        self.rank = rank
        self.needed = needed
        super().__init__(f"system rank {rank} < {needed} unknowns")


class InconsistentSystemError(ArithmeticError):
    """The right-hand side lies outside the column space of the matrix."""


# One irreducible polynomial per width, used when none is supplied. Each is
# re-verified at construction time, so a bad entry cannot slip through.
DEFAULT_POLYNOMIALS = {
    1: 0x3,
    2: 0x7,
    3: 0xB,
    4: 0x13,
    5: 0x25,
    6: 0x43,
    7: 0x83,
    8: 0x11D,
    9: 0x211,
    10: 0x409,
    11: 0x805,
    12: 0x1053,
    13: 0x201B,
    14: 0x4443,
    15: 0x8003,
    16: 0x1100B,
}

_MAX_WIDTH = 16
_MAX_PRIME = 2**31


def _poly_mul_mod(a: int, b: int, modulus: int) -> int:
    """Carry-less product of two GF(2) polynomials, reduced by ``modulus``."""
    deg = modulus.bit_length() - 1
    out = 0
    while b:
        if b & 1:
            out ^= a
        b >>= 1
        a <<= 1
        if a >> deg & 1:
            a ^= modulus
    return out


def _poly_divides(f: int, g: int) -> bool:
    """True if polynomial f divides polynomial g over GF(2)."""
    df = f.bit_length() - 1
    while g.bit_length() - 1 >= df and g:
        g ^= f << (g.bit_length() - 1 - df)
    return g == 0


def _is_irreducible(poly: int, width: int) -> bool:
    if poly.bit_length() - 1 != width:
        return False
    if width == 1:
        return poly in (0x2, 0x3)
    if poly & 1 == 0:  # x divides it
        return False
    # Exhaustive trial division: any factorization has a factor of degree
    # <= width // 2, so testing every polynomial of degree 1..width//2 is
    # a complete check (at most 2^9 candidates for width 16).
    for f in range(2, 1 << (width // 2 + 1)):
        if _poly_divides(f, poly):
            return False
    return True


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return False
        f += 2
    return True


class GaloisField:
    """Arithmetic over GF(2^w) or GF(p), vectorized over int64 arrays.

    Parameters
    ----------
    order : int
        Field order. A prime gives GF(p); a power of two gives GF(2^w).
    modulus : int, optional
        Reduction polynomial for the binary-extension kind, written as an
        integer bit mask (x^8 + x^4 + x^3 + x^2 + 1 -> 0x11D). Defaults to
        a verified per-width table entry. Must be omitted for prime fields.
    """

    def __init__(self, order: int, modulus: int | None = None):
        order = int(order)
        if order < 2:
            raise CompositeOrderError(f"order must be >= 2, got {order}")
        width = order.bit_length() - 1
        if modulus is None and _is_prime(order):
            if order >= _MAX_PRIME:
                raise FieldError(f"prime order  {order} exceeds 2^31 limit")
            self.kind = "prime"
            self.order = order
            self.characteristic = order
            self.degree = 1
            self.modulus = order
        elif order == 1 << width:
            if width > _MAX_WIDTH:
                raise FieldError(f"GF(2^{width}) exceeds the 2^16 limit")
            if modulus is None:
                modulus = DEFAULT_POLYNOMIALS[width]
            if not _is_irreducible(int(modulus), width):
                raise ReduciblePolynomialError(
                    f"0x{int(modulus):X} is not irreducible of degree {width}"
                )
            self.kind = "binary-extension"
            self.order = order
            self.characteristic = 2
            self.degree = width
            self.modulus = int(modulus)
            self._build_tables()
        else:
            raise CompositeOrderError(
                f"order {order} is neither prime nor a power of two"
            )

    def __repr__(self):
        if self.kind == "prime":
            return f"GaloisField({self.order})"
        return f"GaloisField(2**{self.degree}, modulus=0x{self.modulus:X})"

    def __eq__(self, other):
        return (
            isinstance(other, GaloisField)
            and self.kind == other.kind
            and self.order == other.order
            and self.modulus == other.modulus
        )

    def __hash__(self):
        return hash((self.kind, self.order, self.modulus))

    def _build_tables(self):
        n = self.order
        if n == 2:
            self._exp = np.array([1], dtype=np.int64)
            self._log = np.array([0, 0], dtype=np.int64)
            return
        for g in range(2, n):
            vals = [1]
            v = g
            while v != 1:
                vals.append(v)
                v = _poly_mul_mod(v, g, self.modulus)
            if len(vals) == n - 1:
                break
        else:  # pragma: no cover - every finite field has a generator
            raise FieldError("no multiplicative generator found")
        exp = np.array(vals, dtype=np.int64)
        log = np.zeros(n, dtype=np.int64)  # log[0] is a sentinel, masked out
        log[exp] = np.arange(n - 1)
        self._exp = exp
        self._log = log

    # -- element helpers ---------------------------------------------------

    def _arr(self, a):
        arr = np.asarray(a, dtype=np.int64)
        if arr.size and (arr.min() < 0 or arr.max() >= self.order):
            raise ValueError(f"symbol out of range [0, {self.order})")
        return arr

    @staticmethod
    def _ret(out):
        return int(out) if out.ndim == 0 else out

    def elements(self) -> np.ndarray:
        return np.arange(self.order, dtype=np.int64)

    # -- arithmetic --------------------------------------------------------

    def add(self, a, b):
        a, b = self._arr(a), self._arr(b)
        if self.kind == "prime":
            return self._ret((a + b) % self.order)
        return self._ret(a ^ b)

    def sub(self, a, b):
        a, b = self._arr(a), self._arr(b)
        if self.kind == "prime":
            return self._ret((a - b) % self.order)
        return self._ret(a ^ b)

    def neg(self, a):
        a = self._arr(a)
        if self.kind == "prime":
            return self._ret((-a) % self.order)
        return self._ret(a)

    def mul(self, a, b):
        a, b = self._arr(a), self._arr(b)
        if self.kind == "prime":
            return self._ret((a * b) % self.order)
        out = self._exp[(self._log[a] + self._log[b]) % (self.order - 1)]
        out = np.where((a == 0) | (b == 0), 0, out)
        return self._ret(out)

    def inv(self, a):
        a = self._arr(a)
        if np.any(a == 0):
            raise ZeroDivisionError("0 has no multiplicative inverse")
        if self.kind == "prime":
            return self._ret(self._pow_mod(a, self.order - 2))
        n = self.order - 1
        return self._ret(self._exp[(n - self._log[a]) % n])

    def div(self, a, b):
        return self.mul(a, self.inv(b))

    def _pow_mod(self, base, e: int):
        # binary exponentiation; order < 2^31 keeps int64 products exact
        out = np.ones_like(base)
        base = base % self.order
        while e:
            if e & 1:
                out = (out * base) % self.order
            base = (base * base) % self.order
            e >>= 1
        return out

    # -- linear algebra ----------------------------------------------------

    def matmul(self, a, b) -> np.ndarray:
        """Matrix product over the field. 1-d ``b`` is treated as a column."""
        a = np.atleast_2d(self._arr(a))
        b_in = self._arr(b)
        b2 = b_in[:, None] if b_in.ndim == 1 else b_in
        if a.shape[1] != b2.shape[0]:
            raise ValueError(f"shape mismatch {a.shape} @ {b2.shape}")
        if self.kind == "prime":
            prod = (a[:, :, None] * b2[None, :, :]) % self.order
            out = prod.sum(axis=1) % self.order
        else:
            prod = self.mul(a[:, :, None], b2[None, :, :])
            out = np.bitwise_xor.reduce(prod, axis=1)
        return out[:, 0] if b_in.ndim == 1 else out

    def row_reduce(self, a) -> tuple[np.ndarray, list]:
        """Reduced row-echelon form. Returns ``(reduced copy, pivot columns)``.

        Elimination uses the first nonzero entry in column order as the
        pivot: deterministic, and exact since there is no rounding.
        """
        m = np.atleast_2d(self._arr(a)).copy()
        rows, cols = m.shape
        pivots = []
        row = 0
        for col in range(cols):
            if row == rows:
                break
            nz = np.nonzero(m[row:, col])[0]
            if nz.size == 0:
                continue
            p = row + nz[0]
            if p != row:
                m[[row, p]] = m[[p, row]]
            m[row] = self.mul(m[row], self.inv(int(m[row, col])))
            hit = m[:, col] != 0
            hit[row] = False
            if hit.any():
                factors = np.asarray(m[hit, col])[:, None]
                m[hit] = self.sub(m[hit], self.mul(factors, m[row][None, :]))
            pivots.append(col)
            row += 1
        return m, pivots

    def rank(self, a) -> int:
        return len(self.row_reduce(a)[1])

    def solve(self, a, c) -> np.ndarray:
        """Solve ``a @ x = c`` for x, where a is n-by-k with n >= k.

        Raises
        ------
        RankDeficientError
            rank(a) < k: the unknowns are not all determined.
        InconsistentSystemError
            c is not in the column space of a (more equations than rank and
            they disagree), which signals corrupted inputs.
        """
        a = np.atleast_2d(self._arr(a))
        c_in = self._arr(c)
        c2 = c_in[:, None] if c_in.ndim == 1 else c_in
        n, k = a.shape
        if c2.shape[0] != n:
            raise ValueError(f"rhs has {c2.shape[0]} rows, expected {n}")
        aug, pivots = self.row_reduce(np.concatenate([a, c2], axis=1))
        sys_pivots = [p for p in pivots if p < k]
        if len(sys_pivots) < k:
            raise RankDeficientError(len(sys_pivots), k)
        # all k pivots found, so rows k.. are zero in the system block;
        # any nonzero rhs residual there means the equations disagree
        if np.any(aug[k:, k:]):
            raise InconsistentSystemError("equations are contradictory")
        x = aug[:k, k:]
        return x[:, 0] if c_in.ndim == 1 else x
