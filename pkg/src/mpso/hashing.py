"""Hashing to bins: stash-less 3-way Cuckoo hashing, simple hashing and pre-hashing."""
import hashlib
import math
from dataclasses import dataclass

from .errors import HashingError
from .formula import num_bins
from .prg import Prg

NUM_HASHES = 3
RELOCATION_LIMIT = 1024
REHASH_ATTEMPTS = 3


@dataclass(frozen=True)
class HashParams:
    """Keyed BLAKE2b; the three hash functions read consecutive 8-byte words of one
    digest, each mapped onto [0, B) by multiply-shift."""
    seed: bytes
    B: int
    relocation_limit: int = RELOCATION_LIMIT

    @classmethod
    def for_size(cls, n, seed: bytes, **kw):
        return cls(seed=seed, B=num_bins(n), **kw)

    def _keyed(self):
        base = self.__dict__.get("_base")
        if base is None:
            base = hashlib.blake2b(b"bins", key=self.seed, digest_size=8 * NUM_HASHES)
            object.__setattr__(self, "_base", base)
        return base

    def h(self, i: int, x: bytes) -> int:
        return self.positions(x)[i - 1]

    def positions(self, x: bytes):
        hh = self._keyed().copy()
        hh.update(x)
        d = hh.digest()
        B = self.B
        return ((int.from_bytes(d[0:8], "little") * B) >> 64,
                (int.from_bytes(d[8:16], "little") * B) >> 64,
                (int.from_bytes(d[16:24], "little") * B) >> 64)


def tag(x: bytes, i: int) -> bytes:
    return x + bytes([i])


def untag(item: bytes):
    return item[:-1], item[-1]


def dummy_item(width: int) -> bytes:
    """Filler for empty Cuckoo bins; tag 0 never occurs in a simple table."""
    return b"\xff" * width + b"\x00"


class CuckooTable:
    def __init__(self, B, width):
        self.B = B
        self.width = width
        self.bins = [None] * B  # tagged items

    def items(self):
        """One tagged item per bin, dummies in empty bins."""
        d = dummy_item(self.width)
        return [b if b is not None else d for b in self.bins]

    def element(self, b):
        item = self.bins[b]
        return None if item is None else item[:-1]

    def occupied(self):
        return [b is not None for b in self.bins]

    def __len__(self):
        return sum(b is not None for b in self.bins)


class SimpleTable:
    def __init__(self, B):
        self.B = B
        self.bins = [[] for _ in range(B)]

    def __len__(self):
        return sum(len(b) for b in self.bins)


def _width(X):
    widths = {len(x) for x in X}
    if len(widths) > 1:
        raise ValueError("elements must share one width")
    return widths.pop() if widths else 0


def cuckoo_insert(X, p: HashParams, width=None) -> CuckooTable:
    X = list(X)
    width = _width(X) if width is None else width
    table = CuckooTable(p.B, width)
    bins = table.bins
    walk = Prg(p.seed, "cuckoo-walk")
    cache = {x: p.positions(x) for x in X}
    for x in X:
        cur, from_bin = x, None
        for _ in range(p.relocation_limit + 1):
            pos = cache[cur]
            free = next((i for i, b in enumerate(pos, 1) if bins[b] is None), None)
            if free is not None:
                bins[pos[free - 1]] = tag(cur, free)
                break
            # random walk; never push straight back into the bin we were evicted from
            choices = [i for i in range(1, NUM_HASHES + 1) if pos[i - 1] != from_bin] or [1, 2, 3]
            i = choices[walk.randbelow(len(choices))]
            b = pos[i - 1]
            evicted = bins[b]
            bins[b] = tag(cur, i)
            cur, from_bin = evicted[:-1], b
        else:
            raise HashingError("Cuckoo relocation limit exceeded")
    return table


def simple_hash(X, p: HashParams) -> SimpleTable:
    table = SimpleTable(p.B)
    bins = table.bins
    for x in X:
        b1, b2, b3 = p.positions(x)
        bins[b1].append(x + b"\x01")
        bins[b2].append(x + b"\x02")
        bins[b3].append(x + b"\x03")
    return table


def derive_hash_seed(session_seed: bytes, attempt: int) -> bytes:
    return hashlib.blake2b(b"bins" + attempt.to_bytes(2, "little"), key=session_seed[:64], digest_size=16).digest()


def prehash_width(m: int, n: int, sigma: int = 40) -> int:
    bits = math.ceil(sigma + math.log2(max(m - 1, 1)) + 2 * math.log2(max(n, 1)))
    return -(-bits // 8) * 8


def pre_hash(X, m: int, n: int, sigma: int, key: bytes) -> dict:
    """Map each element to a keyed digest of the prescribed width; returns digest -> element."""
    nb = prehash_width(m, n, sigma) // 8
    out = {}
    for x in X:
        d = hashlib.blake2b(x, key=key, digest_size=32, person=b"prehash").digest()[:nb]
        out[d] = x
    return out
