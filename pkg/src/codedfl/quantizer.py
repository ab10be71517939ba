"""Stochastic quantization of model updates and the finite-field codec.

A quantizer grid places 2^B evenly spaced knobs on each coordinate range
[lower_j, upper_j]; values are clipped to the range and rounded to one of
the two adjacent knobs with probability proportional to proximity, which
makes the rounding unbiased for in-range inputs. Grid indices are packed
into field symbols as little-endian base-|field| digits so a message can
be transported through the network code without loss.
"""

from dataclasses import dataclass

import numpy as np

from .galois import GaloisField

# fractional parts this close to a grid point are treated as exact,
# so knob values survive float round-trips deterministically
_SNAP = 1e-9


class CodecError(ValueError):
    """Raised when a symbol vector cannot encode or decode an update."""


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class QuantizerSpec:
    """Grid of 2^bits knobs per coordinate on [lower, upper]."""

    bits: int
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        if self.bits < 1:
            raise ValueError(f"bits must be >= 1, got {self.bits}")
        lower = _readonly(np.atleast_1d(self.lower))
        upper = _readonly(np.atleast_1d(self.upper))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower and upper must be equal-length vectors")
        if not (np.isfinite(lower).all() and np.isfinite(upper).all()):
            raise ValueError("bounds must be finite")
        if np.any(upper < lower):
            raise ValueError("upper must be >= lower in every dimension")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def symmetric(cls, bits: int, half_range: float, dim: int) -> "QuantizerSpec":
        if half_range <= 0:
            raise ValueError(f"half_range must be positive, got {half_range}")
        c = float(half_range)
        return cls(bits, np.full(dim, -c), np.full(dim, c))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def levels(self) -> int:
        return 1 << self.bits

    @property
    def kappa(self) -> np.ndarray:
        """Knob spacing per coordinate; 0 where the range is degenerate."""
        return (self.upper - self.lower) / (self.levels - 1)


@dataclass(frozen=True)
class QuantizedUpdate:
    """Grid indices for one model update, each in [0, 2^bits)."""

    indices: np.ndarray
    bits: int

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64, copy=True)
        if idx.ndim != 1:
            raise ValueError("indices must be a vector")
        if np.any(idx < 0) or np.any(idx >= (1 << self.bits)):
            raise ValueError(f"indices out of range for {self.bits}-bit grid")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)


@dataclass(frozen=True)
class Message:
    """Field-symbol encoding of a quantized update.

    ``order`` is the codec base, kept on the message so decoding needs no
    separate field handle.
    """

    symbols: np.ndarray
    order: int

    def __post_init__(self):
        sym = np.array(self.symbols, dtype=np.int64, copy=True)
        if sym.ndim != 1:
            raise ValueError("symbols must be a vector")
        if np.any(sym < 0) or np.any(sym >= self.order):
            raise ValueError("symbols out of field range")
        sym.setflags(write=False)
        object.__setattr__(self, "symbols", sym)


def quantize(delta, spec: QuantizerSpec, rng: np.random.Generator) -> QuantizedUpdate:
    """Round each coordinate to an adjacent knob, unbiased after clipping.

    A value at distance f·kappa above its floor knob moves up with
    probability f, so the expectation over the rng equals the clipped
    input exactly.
    """
    x = np.asarray(delta, dtype=np.float64)
    if x.shape != spec.lower.shape:
        raise ValueError(f"expected {spec.dim} coordinates, got {x.shape}")
    x = np.clip(x, spec.lower, spec.upper)
    kappa = spec.kappa
    live = kappa > 0
    t = np.zeros_like(x)
    t[live] = (x[live] - spec.lower[live]) / kappa[live]
    base = np.floor(t)
    frac = t - base
    # snap float noise so exact knob values quantize deterministically
    carry = frac > 1.0 - _SNAP
    base = base + carry
    frac = np.where(carry | (frac < _SNAP), 0.0, frac)
    up = rng.random(size=x.shape) < frac
    idx = np.minimum(base.astype(np.int64) + up, spec.levels - 1)
    return QuantizedUpdate(idx, spec.bits)


def dequantize(q: QuantizedUpdate, spec: QuantizerSpec) -> np.ndarray:
    """Map grid indices back to coordinate values inside [lower, upper]."""
    if q.bits != spec.bits:
        raise ValueError(f"update has {q.bits}-bit indices, spec has {spec.bits}")
    if q.indices.shape[0] != spec.dim:
        raise ValueError(f"expected {spec.dim} coordinates, got {q.indices.shape[0]}")
    value = spec.lower + q.indices * spec.kappa
    return np.minimum(value, spec.upper)  # guard the top knob against fp overshoot


def symbols_per_coordinate(bits: int, order: int) -> int:
    """Smallest s with order^s >= 2^bits."""
    if bits < 1 or order < 2:
        raise ValueError("need bits >= 1 and order >= 2")
    s, span = 1, order
    while span < (1 << bits):
        s += 1
        span *= order
    return s


def to_message(q: QuantizedUpdate, field: GaloisField) -> Message:
    """Pack indices as little-endian base-|field| digits, s per coordinate."""
    s = symbols_per_coordinate(q.bits, field.order)
    digits = np.empty((q.indices.shape[0], s), dtype=np.int64)
    rest = q.indices.copy()
    for pos in range(s):
        digits[:, pos] = rest % field.order
        rest //= field.order
    return Message(digits.reshape(-1), field.order)


def from_message(msg: Message, spec: QuantizerSpec) -> QuantizedUpdate:
    """Invert :func:`to_message`; exact round trip on the index space."""
    s = symbols_per_coordinate(spec.bits, msg.order)
    expected = spec.dim * s
    if msg.symbols.shape[0] != expected:
        raise CodecError(
            f"expected {expected} symbols ({spec.dim} coords x {s}), "
            f"got {msg.symbols.shape[0]}"
        )
    digits = msg.symbols.reshape(spec.dim, s)
    weights = msg.order ** np.arange(s, dtype=np.int64)
    indices = digits @ weights
    return QuantizedUpdate(indices, spec.bits)


def variance_bound(spec: QuantizerSpec) -> float:
    """Worst-case mean squared rounding error of the grid.

    Per coordinate the error is kappa-scaled Bernoulli noise with variance
    at most kappa^2/4, so the total is (1/4) sum_j range_j^2 / (2^B - 1)^2.
    """
    delta_sq = 0.25 * float(np.sum((spec.upper - spec.lower) ** 2))
    return delta_sq / (spec.levels - 1) ** 2
