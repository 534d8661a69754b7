"""Trusted-dealer preprocessing and the online operations that consume it.

The dealer produces, per party, Beaver triples over GF(2^k) for each party
subset that multiplies together, XOR-shared bit triples and random-OT
correlations for each ordered (sender, receiver) pair, and shuffle
correlations. Everything derives from one master seed; each party's share
stream is domain-separated by its id.
"""
import io
import struct

import numpy as np

from . import gf as gfm
from .errors import ConfigError, CorrelationError
from .net import Stage
from .prg import Prg

MAGIC = b"MPSOCORR"
VERSION = 1

BEAVER, BEAVER_RAND, BIT, ROT, SHUFFLE = 1, 2, 3, 4, 5
LANE_FIELD, LANE_RING = 0, 1
_KIND_NAMES = {BEAVER: "beaver", BEAVER_RAND: "beaver_rand", BIT: "bit", ROT: "rot", SHUFFLE: "shuffle"}


class Plan:
    """Correlation budget: counts per pool plus shuffle instances [(N, lanes)]."""

    def __init__(self, m, k):
        self.m = m
        self.k = k
        self.counts = {}
        self.shuffles = []

    def add(self, key, count):
        self.counts[key] = self.counts.get(key, 0) + count

    def beaver(self, subset, count, rand=False):
        self.add((BEAVER_RAND if rand else BEAVER, *sorted(subset)), count)

    def bits(self, sender, receiver, count):
        self.add((BIT, sender, receiver), count)

    def rot(self, sender, receiver, count):
        self.add((ROT, sender, receiver), count)

    def shuffle(self, n, lanes=(LANE_FIELD,)):
        self.shuffles.append((n, tuple(lanes)))

    def summary(self):
        out = {}
        for key, c in sorted(self.counts.items()):
            out[f"{_KIND_NAMES[key[0]]}:{'-'.join(map(str, key[1:]))}"] = c
        for i, (n, lanes) in enumerate(self.shuffles):
            out[f"shuffle:{i}"] = n
        return out


# ------------------------------------------------------------------ store

class CorrelationStore:
    """One party's correlated randomness with a monotone cursor per pool."""

    def __init__(self, pid, m, k):
        self.pid = pid
        self.m = m
        self.k = k
        self.pools = {}  # key -> {name: array}
        self.cursor = {}

    @property
    def gf(self):
        return gfm.field(self.k)

    def remaining(self, key):
        pool = self.pools.get(key)
        if pool is None:
            return 0
        return len(next(iter(pool.values()))) - self.cursor.get(key, 0)

    def take(self, key, count):
        pool = self.pools.get(key)
        if pool is None:
            raise CorrelationError(f"no correlations for pool {key}")
        start = self.cursor.get(key, 0)
        total = len(next(iter(pool.values())))
        if start + count > total:
            raise CorrelationError(f"pool {key} underflow: need {count}, have {total - start}")
        self.cursor[key] = start + count
        return {name: arr[start:start + count] for name, arr in pool.items()}

    def take_beaver(self, subset, count, rand=False):
        key = (BEAVER_RAND if rand else BEAVER, *sorted(subset))
        t = self.take(key, count)
        return t["a"], t["b"], t["c"]

    def take_bits(self, sender, receiver, count):
        t = self.take((BIT, sender, receiver), count)
        return t["a"], t["b"], t["c"]

    def take_rot(self, sender, receiver, count):
        t = self.take((ROT, sender, receiver), count)
        if self.pid == sender:
            return RotCorrelation(m0=t["m0"], m1=t["m1"])
        return RotCorrelation(c=t["c"], mc=t["mc"])

    def take_shuffle(self, index, lane):
        key = (SHUFFLE, index, lane)
        if self.cursor.get(key):
            raise CorrelationError(f"shuffle correlation {index}/{lane} already consumed")
        pool = self.pools.get(key)
        if pool is None:
            raise CorrelationError(f"no shuffle correlation {index}/{lane}")
        self.cursor[key] = 1
        return ShuffleCorrelation(self.pid, self.m, pool)

    # ---- file format
    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(MAGIC)
        out.write(struct.pack("<HBBHI", VERSION, self.pid, self.m, self.k, len(self.pools)))
        for key in sorted(self.pools):
            pool = self.pools[key]
            out.write(struct.pack("<B", len(key)))
            out.write(bytes(key))
            out.write(struct.pack("<B", len(pool)))
            for name in sorted(pool):
                arr = pool[name]
                packed = key[0] == BIT
                nb = name.encode()
                out.write(struct.pack("<B", len(nb)) + nb)
                out.write(struct.pack("<BB", 1 if packed else 8, arr.ndim))
                out.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
                if packed:
                    out.write(np.packbits(arr.astype(np.uint8), bitorder="little").tobytes())
                else:
                    out.write(np.ascontiguousarray(arr, dtype="<u8").tobytes())
        return out.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "CorrelationStore":
        buf = io.BytesIO(data)
        if buf.read(8) != MAGIC:
            raise CorrelationError("not a correlation file")
        hdr = buf.read(struct.calcsize("<HBBHI"))
        if len(hdr) != struct.calcsize("<HBBHI"):
            raise CorrelationError("truncated correlation file")
        version, pid, m, k, npools = struct.unpack("<HBBHI", hdr)
        if version != VERSION:
            raise CorrelationError(f"unsupported correlation file version {version}")
        store = cls(pid, m, k)
        try:
            for _ in range(npools):
                klen = buf.read(1)[0]
                key = tuple(buf.read(klen))
                narr = buf.read(1)[0]
                pool = {}
                for _ in range(narr):
                    nlen = buf.read(1)[0]
                    name = buf.read(nlen).decode()
                    width, ndim = struct.unpack("<BB", buf.read(2))
                    shape = struct.unpack(f"<{ndim}Q", buf.read(8 * ndim))
                    size = int(np.prod(shape)) if shape else 1
                    if width == 1:
                        raw = np.frombuffer(buf.read((size + 7) // 8), dtype=np.uint8)
                        arr = np.unpackbits(raw, bitorder="little")[:size].reshape(shape)
                    else:
                        raw = buf.read(8 * size)
                        if len(raw) != 8 * size:
                            raise CorrelationError("truncated correlation file")
                        arr = np.frombuffer(raw, dtype="<u8").astype(np.uint64).reshape(shape)
                    pool[name] = arr
                store.pools[key] = pool
        except (IndexError, struct.error, ValueError) as e:
            raise CorrelationError(f"corrupt correlation file: {e}")
        return store

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "CorrelationStore":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


class RotCorrelation:
    """Random OT: sender holds (m0, m1), receiver holds (c, m_c); vectors over the field."""

    def __init__(self, m0=None, m1=None, c=None, mc=None):
        self.m0, self.m1, self.c, self.mc = m0, m1, c, mc
        self.consumed = False

    def _use(self):
        if self.consumed:
            raise CorrelationError("ROT correlation already consumed")
        self.consumed = True


def rot_receiver_mask(e, corr: RotCorrelation):
    """Receiver side: d = e xor c to send, and its output m_c (= r_e)."""
    corr._use()
    return (np.asarray(e, dtype=np.uint8) ^ corr.c).astype(np.uint8), corr.mc


def rot_sender_outputs(d, corr: RotCorrelation):
    """Sender side: r_i = m_{i xor d} for i in {0, 1}."""
    corr._use()
    sel = np.asarray(d, dtype=bool)[:, None]
    r0 = np.where(sel, corr.m1, corr.m0)
    r1 = np.where(sel, corr.m0, corr.m1)
    return r0, r1


def rot_derandomize(e, sender: RotCorrelation, receiver: RotCorrelation):
    """Both sides of the derandomization in one place (used by tests and audits)."""
    d, out = rot_receiver_mask(e, receiver)
    r0, r1 = rot_sender_outputs(d, sender)
    return (r0, r1), out


class ShuffleCorrelation:
    def __init__(self, pid, m, pool):
        self.pid = pid
        self.m = m
        self.pool = pool

    def perm(self, i):
        return self.pool[f"perm{i}"]

    def delta(self, i):
        return self.pool[f"delta{i}"]

    def a(self, i):
        return self.pool[f"a{i}"]

    def b(self, i):
        return self.pool[f"b{i}"]


# ------------------------------------------------------------------ dealing

def _lane_of(code, k):
    return gfm.Lane(None if code == LANE_RING else gfm.field(k))


def _share(total, lane, streams, rand):
    """Additive shares of `total`; all but the last party draw from their own stream."""
    shares = []
    acc = lane.zeros(len(total))
    for s in streams[:-1]:
        v = rand(s)
        shares.append(v)
        acc = lane.add(acc, v)
    shares.append(lane.sub(total, acc))
    return shares


def deal(plan: Plan, master_seed) -> dict:
    """Generate every party's CorrelationStore for `plan`; returns {pid: store}."""
    m, k = plan.m, plan.k
    F = gfm.field(k)
    flane = gfm.Lane(F)
    stores = {pid: CorrelationStore(pid, m, k) for pid in range(1, m + 1)}
    for key in sorted(plan.counts):
        count = plan.counts[key]
        kind = key[0]
        tag = ("dealer", *key)
        if kind in (BEAVER, BEAVER_RAND):
            subset = key[1:]
            g = Prg(master_seed, *tag, "total")
            a = F.rand_vec(g, count)
            b = F.rand_nonzero_vec(g, count) if kind == BEAVER_RAND else F.rand_vec(g, count)
            c = F.vmul(a, b)
            streams = [Prg(master_seed, *tag, pid) for pid in subset]
            sa = _share(a, flane, streams, lambda s: F.rand_vec(s, count))
            sb = _share(b, flane, streams, lambda s: F.rand_vec(s, count))
            sc = _share(c, flane, streams, lambda s: F.rand_vec(s, count))
            for idx, pid in enumerate(subset):
                stores[pid].pools[key] = {"a": sa[idx], "b": sb[idx], "c": sc[idx]}
        elif kind == BIT:
            sender, receiver = key[1:]
            g = Prg(master_seed, *tag, "total")
            a, b = g.bits(count), g.bits(count)
            c = a & b
            gs = Prg(master_seed, *tag, sender)
            s = {"a": gs.bits(count), "b": gs.bits(count), "c": gs.bits(count)}
            r = {"a": a ^ s["a"], "b": b ^ s["b"], "c": c ^ s["c"]}
            stores[sender].pools[key] = s
            stores[receiver].pools[key] = r
        elif kind == ROT:
            sender, receiver = key[1:]
            gs = Prg(master_seed, *tag, sender)
            gr = Prg(master_seed, *tag, receiver)
            m0, m1 = F.rand_vec(gs, count), F.rand_vec(gs, count)
            c = gr.bits(count)
            mc = np.where(c.astype(bool)[:, None], m1, m0)
            stores[sender].pools[key] = {"m0": m0, "m1": m1}
            stores[receiver].pools[key] = {"c": c, "mc": mc}
        else:
            raise ConfigError(f"unknown correlation kind {kind}")
    for idx, (n, lanes) in enumerate(plan.shuffles):
        perms = {i: Prg(master_seed, "dealer-shuffle", idx, "perm", i).permutation(n) for i in range(1, m + 1)}
        for code in lanes:
            lane = _lane_of(code, k)
            key = (SHUFFLE, idx, code)
            pools = {pid: {} for pid in range(1, m + 1)}
            for i in range(1, m + 1):
                sa = lane.zeros(n)
                sb = lane.zeros(n)
                for j in range(1, m + 1):
                    if j == i:
                        continue
                    g = Prg(master_seed, "dealer-shuffle", idx, code, i, j)
                    aj, bj = lane.rand(g, n), lane.rand(g, n)
                    pools[j][f"a{i}"] = aj
                    pools[j][f"b{i}"] = bj
                    sa = lane.add(sa, aj)
                    sb = lane.add(sb, bj)
                pools[i][f"perm{i}"] = perms[i].astype(np.uint64)
                pools[i][f"delta{i}"] = lane.sub(sa[perms[i]], sb)
            for pid in range(1, m + 1):
                stores[pid].pools[key] = pools[pid]
    return stores


def audit(stores: dict, plan: Plan):
    """Test-only: gather all shares and check every defining identity. Returns failure count."""
    m, k = plan.m, plan.k
    F = gfm.field(k)
    bad = 0
    for key in plan.counts:
        kind = key[0]
        if kind in (BEAVER, BEAVER_RAND):
            parts = [stores[p].pools[key] for p in key[1:]]
            a = np.bitwise_xor.reduce([p["a"] for p in parts])
            b = np.bitwise_xor.reduce([p["b"] for p in parts])
            c = np.bitwise_xor.reduce([p["c"] for p in parts])
            bad += int((F.vmul(a, b) != c).any(axis=1).sum())
            if kind == BEAVER_RAND:
                bad += int(F.is_zero(b).sum())
        elif kind == BIT:
            s, r = stores[key[1]].pools[key], stores[key[2]].pools[key]
            bad += int((((s["a"] ^ r["a"]) & (s["b"] ^ r["b"])) != (s["c"] ^ r["c"])).sum())
        elif kind == ROT:
            s, r = stores[key[1]].pools[key], stores[key[2]].pools[key]
            want = np.where(r["c"].astype(bool)[:, None], s["m1"], s["m0"])
            bad += int((want != r["mc"]).any(axis=1).sum())
    for idx, (n, lanes) in enumerate(plan.shuffles):
        for code in lanes:
            lane = _lane_of(code, k)
            key = (SHUFFLE, idx, code)
            for i in range(1, m + 1):
                sa, sb = lane.zeros(n), lane.zeros(n)
                for j in range(1, m + 1):
                    if j != i:
                        sa = lane.add(sa, stores[j].pools[key][f"a{i}"])
                        sb = lane.add(sb, stores[j].pools[key][f"b{i}"])
                perm = stores[i].pools[key][f"perm{i}"].astype(np.int64)
                want = lane.sub(sa[perm], sb)
                got = stores[i].pools[key][f"delta{i}"]
                diff = want != got
                bad += int(diff.any(axis=-1).sum() if diff.ndim > 1 else diff.sum())
    return bad


# ------------------------------------------------------------------ online Beaver ops
#
# `group` is the sorted list of party ids holding shares; `leader` collects
# the masked shares and broadcasts the opened value.

def _open(ctx, group, leader, rnd, value, lane):
    """Open sum of `value` shares via the leader; returns the opened vector."""
    net = ctx.net
    if ctx.pid == leader:
        total = value
        for j in group:
            if j != leader:
                total = lane.add(total, lane.from_bytes(net.recv(j, Stage.BEAVER, rnd)).reshape(value.shape))
        data = lane.to_bytes(total)
        net.broadcast(Stage.BEAVER, rnd + 1, data, to=[j for j in group if j != leader])
        return total
    net.send(leader, Stage.BEAVER, rnd, lane.to_bytes(value))
    return lane.from_bytes(net.recv(leader, Stage.BEAVER, rnd + 1)).reshape(value.shape)


def beaver_mul(ctx, group, leader, x, y, triple):
    """Shares of x*y; d = x - a and e = y - b are opened together in one exchange."""
    F = ctx.gf
    a, b, c = triple
    lane = gfm.Lane(F)
    n = len(x)
    de = _open(ctx, group, leader, 0, np.concatenate([x ^ a, y ^ b]), lane)
    d, e = de[:n], de[n:]
    z = c ^ F.vmul(d, b) ^ F.vmul(e, a)
    if ctx.pid == leader:
        z ^= F.vmul(d, e)
    return z


def beaver_mul_random(ctx, group, leader, r, triple):
    """Shares of r*b where b is the triple's own multiplier: one opening of u = r + a."""
    F = ctx.gf
    a, b, c = triple
    u = _open(ctx, group, leader, 2, r ^ a, gfm.Lane(F))
    return F.vmul(u, b) ^ c
