"""Arithmetic in GF(2^k) for k in {16, 64, 128}, plus the 2^64 payload ring.

Scalars are `FieldElem` values. Batched share vectors are numpy arrays of
shape (N, W) and dtype uint64, W = 1 for k <= 64 and W = 2 for k = 128
(low word first), so XOR of shares is plain `^`.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FieldError

U64 = np.uint64
MASK64 = (1 << 64) - 1

# exponents of the low-order terms of each reduction polynomial
_TAPS = {
    16: (0, 1, 3, 5),
    64: (0, 1, 3, 4),
    128: (0, 1, 2, 7),
}
SUPPORTED = tuple(_TAPS)


def clmul(a: int, b: int) -> int:
    """Carry-less product of two non-negative ints."""
    r = 0
    while b:
        if b & 1:
            r ^= a
        a <<= 1
        b >>= 1
    return r


def poly_mod(a: int, mod: int) -> int:
    d = mod.bit_length() - 1
    while a.bit_length() - 1 >= d:
        a ^= mod << (a.bit_length() - 1 - d)
    return a


class GF:
    """Field descriptor for GF(2^k)."""

    def __init__(self, k):
        if k not in _TAPS:
            raise ConfigError(f"unsupported field width {k}")
        self.k = k
        self.taps = _TAPS[k]
        self.poly = (1 << k) | sum(1 << t for t in self.taps)
        self.mask = (1 << k) - 1
        self.words = 2 if k == 128 else 1
        self.nbytes = k // 8

    def __repr__(self):
        return f"GF(2^{self.k})"

    def __eq__(self, other):
        return isinstance(other, GF) and other.k == self.k

    def __hash__(self):
        return hash(("GF", self.k))

    # scalar ops on ints
    def mul(self, a: int, b: int) -> int:
        return poly_mod(clmul(a, b), self.poly)

    def inv(self, a: int) -> int:
        if a == 0:
            raise FieldError("zero has no inverse")
        # extended Euclid over GF(2)[x]
        r0, r1 = self.poly, a
        s0, s1 = 0, 1
        while r1:
            shift = r0.bit_length() - r1.bit_length()
            if shift < 0:
                r0, r1, s0, s1 = r1, r0, s1, s0
                continue
            r0 ^= r1 << shift
            s0 ^= s1 << shift
        # r0 == 1 here since poly is irreducible
        return poly_mod(s0, self.poly)

    def elem(self, v) -> "FieldElem":
        return FieldElem(int(v) & self.mask, self.k)

    def rand(self, prg) -> "FieldElem":
        return FieldElem(prg.getrandbits(self.k), self.k)

    # vector ops on (N, W) uint64 arrays
    def zeros(self, n):
        return np.zeros((n, self.words), dtype=U64)

    def rand_vec(self, prg, n):
        v = prg.u64(n * self.words).reshape(n, self.words)
        if self.k < 64:
            v &= U64(self.mask)
        return v

    def rand_nonzero_vec(self, prg, n):
        v = self.rand_vec(prg, n)
        while True:
            z = self.is_zero(v)
            if not z.any():
                return v
            v[z] = self.rand_vec(prg, int(z.sum()))

    def is_zero(self, v):
        return ~v.any(axis=1)

    def from_ints(self, xs):
        xs = list(xs)
        out = self.zeros(len(xs))
        for i, x in enumerate(xs):
            x = int(x)
            if x >> self.k:
                raise ConfigError(f"value does not fit in {self.k} bits")
            out[i, 0] = x & MASK64
            if self.words == 2:
                out[i, 1] = x >> 64
        return out

    def to_ints(self, v):
        if self.words == 1:
            return [int(x) for x in v[:, 0]]
        return [int(lo) | (int(hi) << 64) for lo, hi in v]

    def vec_to_bytes(self, v) -> bytes:
        if self.k == 16:
            return v[:, 0].astype("<u2").tobytes()
        return np.ascontiguousarray(v, dtype="<u8").tobytes()

    def vec_from_bytes(self, data, n=None):
        if n is not None and len(data) != n * self.nbytes:
            raise ConfigError("share vector length mismatch")
        if self.k == 16:
            arr = np.frombuffer(data, dtype="<u2").astype(U64)
            return arr.reshape(-1, 1)
        arr = np.frombuffer(data, dtype="<u8").astype(U64)
        return arr.reshape(-1, self.words)

    def vmul(self, a, b):
        """Elementwise product of two (N, W) arrays."""
        if self.k == 128:
            return _mul128(a, b, self.taps)
        x, y = a[:, 0], b[:, 0]
        if self.k == 64:
            lo, hi = _clmul64(x, y, 64)
            return _fold64(lo, hi, self.taps).reshape(-1, 1)
        lo, _ = _clmul64(x, y, self.k)
        return _reduce_small(lo, self.k, self.poly).reshape(-1, 1)

    def vscale(self, c: int, v):
        """Multiply every entry of v by the public scalar c."""
        cv = self.from_ints([c])
        return self.vmul(np.repeat(cv, len(v), axis=0), v)


def _clmul64(a, b, nbits):
    lo = np.zeros_like(a)
    hi = np.zeros_like(a)
    zero = U64(0)
    for i in range(nbits):
        m = zero - ((b >> U64(i)) & U64(1))
        t = a & m
        lo ^= t << U64(i)
        if i:
            hi ^= t >> U64(64 - i)
    return lo, hi


def _fold64(lo, hi, taps):
    # hi * x^64 == hi * tail(x); the overflow of that product is folded once more
    r = lo.copy()
    ov = np.zeros_like(lo)
    for t in taps:
        r ^= hi << U64(t)
        if t:
            ov ^= hi >> U64(64 - t)
    for t in taps:
        r ^= ov << U64(t)
    return r


def _reduce_small(v, k, poly):
    v = v.copy()
    for bit in range(2 * k - 2, k - 1, -1):
        m = U64(0) - ((v >> U64(bit)) & U64(1))
        v ^= U64(poly << (bit - k)) & m
    return v


def _mul128(a, b, taps):
    a0, a1 = a[:, 0], a[:, 1]
    b0, b1 = b[:, 0], b[:, 1]
    l00, h00 = _clmul64(a0, b0, 64)
    l01, h01 = _clmul64(a0, b1, 64)
    l10, h10 = _clmul64(a1, b0, 64)
    l11, h11 = _clmul64(a1, b1, 64)
    w0 = l00
    w1 = h00 ^ l01 ^ l10
    w2 = h01 ^ h10 ^ l11
    w3 = h11
    # fold (w2, w3) * x^128 == (w2, w3) * tail(x)
    r0 = w0.copy()
    r1 = w1.copy()
    ov = np.zeros_like(w0)
    for t in taps:
        if t == 0:
            r0 ^= w2
            r1 ^= w3
        else:
            r0 ^= w2 << U64(t)
            r1 ^= (w3 << U64(t)) ^ (w2 >> U64(64 - t))
            ov ^= w3 >> U64(64 - t)
    for t in taps:
        r0 ^= ov << U64(t)
    return np.stack([r0, r1], axis=1)


_FIELDS = {}


def field(k) -> GF:
    if k not in _FIELDS:
        _FIELDS[k] = GF(k)
    return _FIELDS[k]


@dataclass(frozen=True)
class FieldElem:
    value: int
    k: int

    @property
    def field(self) -> GF:
        return field(self.k)

    def _check(self, other):
        if not isinstance(other, FieldElem) or other.k != self.k:
            raise ConfigError("field width mismatch")

    def __add__(self, other):
        return gf_add(self, other)

    __sub__ = __add__

    def __neg__(self):
        return self

    def __mul__(self, other):
        return gf_mul(self, other)

    def inverse(self):
        return gf_inv(self)

    def __bool__(self):
        return self.value != 0

    def to_bytes(self) -> bytes:
        return self.value.to_bytes(self.k // 8, "little")

    @classmethod
    def from_bytes(cls, data: bytes, k: int) -> "FieldElem":
        if len(data) != k // 8:
            raise ConfigError("field element byte length mismatch")
        return cls(int.from_bytes(data, "little"), k)


def gf_add(a: FieldElem, b: FieldElem) -> FieldElem:
    a._check(b)
    return FieldElem(a.value ^ b.value, a.k)


def gf_mul(a: FieldElem, b: FieldElem) -> FieldElem:
    a._check(b)
    return FieldElem(a.field.mul(a.value, b.value), a.k)


def gf_inv(a: FieldElem) -> FieldElem:
    return FieldElem(a.field.inv(a.value), a.k)


def rand_elem(prg, k) -> FieldElem:
    return field(k).rand(prg)


@dataclass(frozen=True)
class PayloadElem:
    """Integer modulo 2^64."""
    value: int

    def __post_init__(self):
        object.__setattr__(self, "value", self.value & MASK64)

    def __add__(self, other):
        return PayloadElem(self.value + other.value)

    def __sub__(self, other):
        return PayloadElem(self.value - other.value)

    def __neg__(self):
        return PayloadElem(-self.value)

    def to_bytes(self) -> bytes:
        return self.value.to_bytes(8, "little")


class Lane:
    """Additive group used by a share vector: the field (XOR) or the 2^64 ring."""

    def __init__(self, gf=None):
        self.gf = gf

    @property
    def is_ring(self):
        return self.gf is None

    @property
    def nbytes(self):
        return 8 if self.gf is None else self.gf.nbytes

    def add(self, a, b):
        return a + b if self.gf is None else a ^ b

    def sub(self, a, b):
        return a - b if self.gf is None else a ^ b

    def zeros(self, n):
        return np.zeros(n, dtype=U64) if self.gf is None else self.gf.zeros(n)

    def rand(self, prg, n):
        return prg.u64(n) if self.gf is None else self.gf.rand_vec(prg, n)

    def to_bytes(self, v):
        if self.gf is None:
            return v.astype("<u8").tobytes()
        return self.gf.vec_to_bytes(v)

    def from_bytes(self, data):
        if self.gf is None:
            return np.frombuffer(data, dtype="<u8").astype(U64)
        return self.gf.vec_from_bytes(data)

    def __repr__(self):
        return "Lane(ring64)" if self.gf is None else f"Lane({self.gf!r})"
