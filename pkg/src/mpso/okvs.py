"""Random-band oblivious key-value store.

Each key hashes to a start position and a 64-bit band; the encoding is a slot
vector with <band(key), slots> = value for every programmed key (GF(2)
inner product, slot values are gamma-bit strings).
"""
import hashlib
import struct

import numpy as np
from numba import njit

from .errors import OkvsError
from .prg import Prg

W = 64
RATE_NUM, RATE_DEN = 13, 10
MIN_SLOTS = 64
MAX_ATTEMPTS = 8
VERSION = 1
_HDR = struct.Struct("<B16sHQ")


def slot_count(n_keys: int) -> int:
    return max(MIN_SLOTS, -(-RATE_NUM * n_keys // RATE_DEN))


def words_for(gamma: int) -> int:
    return max(1, -(-gamma // 64))


def _mask_words(arr, gamma):
    top = gamma - 64 * (arr.shape[1] - 1)
    if top < 64:
        arr[:, -1] &= np.uint64((1 << top) - 1)
    return arr


def ints_to_words(xs, gamma):
    wv = words_for(gamma)
    nb = 8 * wv
    buf = b"".join(int(x).to_bytes(nb, "little") for x in xs)
    return np.frombuffer(buf, dtype="<u8").astype(np.uint64).reshape(-1, wv)


def words_to_ints(arr):
    raw = np.ascontiguousarray(arr, dtype="<u8").tobytes()
    nb = 8 * arr.shape[1]
    return [int.from_bytes(raw[i:i + nb], "little") for i in range(0, len(raw), nb)]


def band_params(keys, seed: bytes, m: int):
    """(starts, bands) for each key as two uint64 arrays."""
    span = m - W + 1
    base = hashlib.blake2b(b"okvs", key=seed, digest_size=16)
    starts = np.empty(len(keys), dtype=np.int64)
    bands = np.empty(len(keys), dtype=np.uint64)
    for i, k in enumerate(keys):
        h = base.copy()
        h.update(k)
        d = h.digest()
        starts[i] = (int.from_bytes(d[:8], "little") * span) >> 64
        bands[i] = int.from_bytes(d[8:], "little") or 1
    return starts, bands


class OkvsEncoding:
    def __init__(self, seed: bytes, gamma: int, slots, attempts=1):
        self.seed = seed
        self.gamma = gamma
        self.slots = slots  # (m, words) uint64
        self.attempts = attempts

    @property
    def size(self):
        return len(self.slots)

    def decode(self, keys):
        """Decode many keys at once; returns a (len(keys), words) uint64 array."""
        starts, bands = band_params(keys, self.seed, self.size)
        return decode_bands(self.slots, starts, bands)

    def decode_one(self, key) -> int:
        return words_to_ints(self.decode([key]))[0]

    def to_bytes(self) -> bytes:
        nb = -(-self.gamma // 8)
        raw = np.ascontiguousarray(self.slots, dtype="<u8").view(np.uint8).reshape(self.size, -1)
        return _HDR.pack(VERSION, self.seed, self.gamma, self.size) + raw[:, :nb].tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "OkvsEncoding":
        if len(data) < _HDR.size:
            raise OkvsError("truncated OKVS encoding")
        ver, seed, gamma, m = _HDR.unpack_from(data)
        if ver != VERSION:
            raise OkvsError(f"unsupported OKVS version {ver}")
        nb = -(-gamma // 8)
        body = data[_HDR.size:]
        if len(body) != m * nb:
            raise OkvsError("OKVS slot data length mismatch")
        wv = words_for(gamma)
        raw = np.zeros((m, 8 * wv), dtype=np.uint8)
        raw[:, :nb] = np.frombuffer(body, dtype=np.uint8).reshape(m, nb)
        slots = raw.view("<u8").astype(np.uint64).reshape(m, wv)
        return cls(seed, gamma, slots)


def decode_bands(slots, starts, bands):
    acc = np.zeros((len(starts), slots.shape[1]), dtype=np.uint64)
    for j in range(W):
        sel = ((bands >> np.uint64(j)) & np.uint64(1)).astype(bool)
        if sel.any():
            acc[sel] ^= slots[starts[sel] + j]
    return acc


@njit(cache=True)
def _solve_kernel(order, starts, bands, vals, slots):
    """Band elimination followed by back substitution into `slots` (pre-filled with randomness).

    Returns False when the system is inconsistent.
    """
    m, wv = slots.shape
    one = np.uint64(1)
    has = np.zeros(m, np.bool_)
    pb = np.zeros(m, np.uint64)
    pv = np.zeros((m, wv), np.uint64)
    v = np.empty(wv, np.uint64)
    for idx in range(order.shape[0]):
        i = order[idx]
        s = starts[i]
        b = bands[i]
        for w in range(wv):
            v[w] = vals[i, w]
        while True:
            while (b & one) == 0:
                b >>= one
                s += 1
            if not has[s]:
                has[s] = True
                pb[s] = b
                for w in range(wv):
                    pv[s, w] = v[w]
                break
            b ^= pb[s]
            for w in range(wv):
                v[w] ^= pv[s, w]
            if b == 0:
                for w in range(wv):
                    if v[w] != 0:
                        return False
                break
    for p in range(m - 1, -1, -1):
        if not has[p]:
            continue
        b = pb[p] >> one
        c = p + 1
        for w in range(wv):
            v[w] = pv[p, w]
        while b != 0:
            if b & one:
                for w in range(wv):
                    v[w] ^= slots[c, w]
            b >>= one
            c += 1
        for w in range(wv):
            slots[p, w] = v[w]
    return True


def okvs_encode(keys, values, gamma: int, prg: Prg = None) -> OkvsEncoding:
    """Encode keys -> values (list of ints or (N, words) uint64 array) into a random-band OKVS."""
    keys = list(keys)
    if len(set(keys)) != len(keys):
        raise OkvsError("OKVS keys must be distinct")
    if prg is None:
        prg = Prg(hashlib.sha256(b"".join(keys)).digest(), "okvs-default")
    wv = words_for(gamma)
    if isinstance(values, np.ndarray):
        vals = np.ascontiguousarray(values, dtype=np.uint64).reshape(len(keys), -1 if len(keys) else wv)
    else:
        vals = ints_to_words(values, gamma) if len(keys) else np.zeros((0, wv), np.uint64)
    if vals.shape[1] != wv or (len(keys) and (_mask_words(vals.copy(), gamma) != vals).any()):
        raise OkvsError(f"values exceed {gamma} bits")
    m = slot_count(len(keys))
    for attempt in range(1, MAX_ATTEMPTS + 1):
        seed = prg.bytes(16)
        starts, bands = band_params(keys, seed, m)
        order = np.argsort(starts, kind="stable")
        slots = _mask_words(prg.u64(m * wv).reshape(m, wv), gamma)
        if _solve_kernel(order, starts, bands, vals, slots):
            return OkvsEncoding(seed, gamma, slots, attempts=attempt)
    raise OkvsError(f"OKVS encoding failed after {MAX_ATTEMPTS} attempts")


def okvs_decode(enc: OkvsEncoding, key: bytes) -> int:
    return enc.decode_one(key)
