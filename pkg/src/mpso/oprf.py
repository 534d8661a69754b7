"""Group-based OPRF over Curve25519 and the batch OPPRF built on top of the OKVS.

F(k, tag, x) = H2(tag||x, k * H1(tag||x)), with H1 hashing onto the curve and
k a clamped X25519 scalar. Clamped scalars are multiples of the cofactor, so
every value the protocol handles lies in the prime-order subgroup and
blinding by r is undone by a clamped representative of r^-1 mod l.
"""
import hashlib
import struct

import gmpy2
from gmpy2 import mpz
import numpy as np
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey

from .errors import ProtocolError
from .okvs import OkvsEncoding, okvs_encode, words_for

P = 2**255 - 19
L = 2**252 + 27742317777372353535851937790883648493
A24 = 486662
_INV8 = pow(8, -1, L)
_P, _A = mpz(P), mpz(A24)
_U_MASK = (1 << 255) - 1
POINT_BYTES = 32


def clamp(t: int) -> int:
    """Clamped scalar with free part t < 2^251."""
    return (1 << 254) | (t << 3)


class OprfKey:
    def __init__(self, scalar: int):
        if scalar % 8 or not (1 << 254) <= scalar < (1 << 255):
            raise ValueError("OPRF scalar must be clamped")
        self.scalar = scalar
        self._sk = X25519PrivateKey.from_private_bytes(scalar.to_bytes(32, "little"))

    @classmethod
    def generate(cls, prg):
        return cls(clamp(prg.getrandbits(251)))

    def mul(self, point: bytes) -> bytes:
        try:
            return self._sk.exchange(X25519PublicKey.from_public_bytes(point))
        except ValueError:
            raise ProtocolError("identity group element")


def blinding_pair(prg):
    """Random clamped r together with a clamped scalar acting as r^-1 on the subgroup."""
    while True:
        r = clamp(prg.getrandbits(251))
        d = pow(r, -1, L)
        t = ((d - (1 << 254)) * _INV8) % L
        if t < (1 << 251):
            return OprfKey(r), OprfKey(clamp(t))


def _enc_input(tag: int, x: bytes) -> bytes:
    return struct.pack("<I", tag) + x


def hash_to_group(data: bytes) -> bytes:
    """Elligator 2 map of a hash of `data` onto the curve (never the twist)."""
    ctr = 0
    while True:
        h = hashlib.sha256(b"H1" + ctr.to_bytes(2, "little") + data).digest()
        r = mpz(int.from_bytes(h, "little") & _U_MASK) % _P
        if r:
            # 2 is a non-square mod p, so 1 + 2r^2 never vanishes
            u = (-_A * gmpy2.invert(1 + 2 * r * r, _P)) % _P
            if gmpy2.jacobi(u * (u * (u + _A) + 1) % _P, _P) == -1:
                u = (-u - _A) % _P
            if u:
                return int(u).to_bytes(32, "little")
        ctr += 1


def _h2_base(domain: bytes):
    return hashlib.shake_256(b"H2" + struct.pack("<I", len(domain)) + domain)


def h2(data: bytes, point: bytes, gamma: int, domain: bytes = b"") -> int:
    nb = (gamma + 7) // 8
    h = _h2_base(domain)
    h.update(struct.pack("<I", len(data)) + data + point)
    return int.from_bytes(h.digest(nb), "little") & ((1 << gamma) - 1)


def oprf_eval_point(key: OprfKey, tag: int, x: bytes) -> bytes:
    return key.mul(hash_to_group(_enc_input(tag, x)))


def oprf_eval_direct(key: OprfKey, tag: int, x: bytes, gamma: int) -> int:
    data = _enc_input(tag, x)
    return h2(data, key.mul(hash_to_group(data)), gamma)


def oprf_blind(x: bytes, tag: int, r: OprfKey) -> bytes:
    return r.mul(hash_to_group(_enc_input(tag, x)))


def oprf_respond(key: OprfKey, a: bytes) -> bytes:
    if len(a) != POINT_BYTES:
        raise ProtocolError("malformed group element")
    return key.mul(a)


def oprf_finalize(x: bytes, tag: int, unblind: OprfKey, b: bytes, gamma: int) -> int:
    """`unblind` is the second element of the blinding pair used for oprf_blind."""
    return h2(_enc_input(tag, x), unblind.mul(b), gamma)


# ------------------------------------------------------------------ batch PRF values
#
# A party caches, per peer, the group values Y = k * H1(tag||x) it knows: the
# receiver for its Cuckoo queries, the sender for its simple-table items.
# Each OPPRF invocation then derives gamma-bit outputs from Y by H2.

class PrfValues:
    """Map (tag, item) -> 32-byte PRF group value, with vectorized H2 expansion."""

    def __init__(self, entries):
        self.entries = entries  # list of (tag, item, Y)
        self._tails = None
        self._keys = None

    def keys(self):
        """OKVS keys (tag||x) of the entries."""
        if self._keys is None:
            self._keys = [okvs_key(t, x) for t, x, _ in self.entries]
        return self._keys

    def encoded(self):
        """Length-prefixed tag||x followed by Y for each entry: the per-item H2 input."""
        if self._tails is None:
            tails = []
            for tag, x, y in self.entries:
                data = _enc_input(tag, x)
                tails.append(struct.pack("<I", len(data)) + data + y)
            self._tails = tails
        return self._tails

    def expand(self, gamma: int, domain: bytes = b""):
        wv = words_for(gamma)
        nb = (gamma + 7) // 8
        base = _h2_base(domain)
        raw = bytearray()
        for t in self.encoded():
            h = base.copy()
            h.update(t)
            raw += h.digest(nb)
        rows = np.zeros((len(self.entries), 8 * wv), dtype=np.uint8)
        if len(self.entries):
            rows[:, :nb] = np.frombuffer(bytes(raw), dtype=np.uint8).reshape(-1, nb)
        arr = rows.view("<u8").astype(np.uint64).reshape(-1, wv)
        top = gamma - 64 * (wv - 1)
        if top < 64:
            arr[:, -1] &= np.uint64((1 << top) - 1)
        return arr


def ideal_value(key: bytes, tag: int, x: bytes) -> bytes:
    return hashlib.blake2b(_enc_input(tag, x), key=key, digest_size=32, person=b"ideal-oprf").digest()


def _ideal_values(key: bytes, items):
    base = hashlib.blake2b(key=key, digest_size=32, person=b"ideal-oprf")
    out = []
    for t, x in items:
        h = base.copy()
        h.update(_enc_input(t, x))
        out.append((t, x, h.digest()))
    return out


def sender_values(key, items, ideal_key=None) -> PrfValues:
    """items: list of (tag, x). Direct evaluation under the sender's key."""
    if ideal_key is not None:
        return PrfValues(_ideal_values(ideal_key, items))
    return PrfValues([(t, x, oprf_eval_point(key, t, x)) for t, x in items])


def receiver_blind(items, r: OprfKey) -> bytes:
    return b"".join(oprf_blind(x, t, r) for t, x in items)


def sender_respond(key: OprfKey, payload: bytes) -> bytes:
    if len(payload) % POINT_BYTES:
        raise ProtocolError("malformed blinded batch")
    return b"".join(key.mul(payload[i:i + POINT_BYTES]) for i in range(0, len(payload), POINT_BYTES))


def receiver_finalize(items, unblind: OprfKey, payload: bytes) -> PrfValues:
    if len(payload) != POINT_BYTES * len(items):
        raise ProtocolError("OPRF response length mismatch")
    ys = [unblind.mul(payload[i * POINT_BYTES:(i + 1) * POINT_BYTES]) for i in range(len(items))]
    return PrfValues([(t, x, y) for (t, x), y in zip(items, ys)])


# ------------------------------------------------------------------ OPPRF

def okvs_key(tag: int, x: bytes) -> bytes:
    return _enc_input(tag, x)


def opprf_program(values: PrfValues, targets, gamma: int, prg, domain: bytes = b"") -> OkvsEncoding:
    """Hint programming each (tag, item) of `values` to the matching row of `targets`.

    targets: (N, words) uint64 array aligned with values.entries.
    """
    keys = values.keys()
    if not keys:
        return okvs_encode([], np.zeros((0, words_for(gamma)), np.uint64), gamma, prg)
    masked = np.asarray(targets, dtype=np.uint64) ^ values.expand(gamma, domain)
    return okvs_encode(keys, masked, gamma, prg)


def opprf_receive(values: PrfValues, hint: OkvsEncoding, domain: bytes = b""):
    """f = decode(hint, tag||x) xor F(tag, x) for each receiver query, as (B, words) array."""
    return hint.decode(values.keys()) ^ values.expand(hint.gamma, domain)
