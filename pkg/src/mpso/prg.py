"""Deterministic expandable PRG (AES-128 in counter mode)."""
import hashlib

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes


def _key(seed, domain):
    h = hashlib.sha256()
    h.update(b"mpso.prg")
    for part in (seed, *domain):
        if isinstance(part, int):
            part = part.to_bytes(16, "little", signed=False)
        elif isinstance(part, str):
            part = part.encode()
        h.update(len(part).to_bytes(4, "little"))
        h.update(part)
    return h.digest()


class Prg:
    """Stream of pseudorandom bytes; `fork` derives independent named sub-streams."""

    def __init__(self, seed, *domain):
        self._root = _key(seed, domain)
        enc = Cipher(algorithms.AES(self._root[:16]), modes.CTR(self._root[16:])).encryptor()
        self._enc = enc

    def fork(self, *domain):
        return Prg(self._root, *domain)

    def bytes(self, n):
        return self._enc.update(bytes(n))

    def u64(self, n):
        return np.frombuffer(self.bytes(8 * n), dtype="<u8").astype(np.uint64)

    def bits(self, n):
        return (np.frombuffer(self.bytes(n), dtype=np.uint8) & 1).astype(np.uint8)

    def getrandbits(self, k):
        nb = (k + 7) // 8
        v = int.from_bytes(self.bytes(nb), "little")
        return v & ((1 << k) - 1)

    def randbelow(self, n):
        # rejection sampling on a 64-bit draw
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            v = int.from_bytes(self.bytes(8), "little")
            if v < limit:
                return v % n

    def permutation(self, n):
        # sorting distinct-with-overwhelming-probability keys gives a uniform permutation
        keys = self.u64(n)
        return np.argsort(keys, kind="stable").astype(np.int64)
