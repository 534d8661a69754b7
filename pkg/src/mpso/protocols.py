"""End-user functionalities and the machinery to run them.

Every party runs `run_party` with its own context; the leader is P1.
MPSI-family inputs are pre-hashed to short digests; union and generic set
operations embed the element itself into the high bits of a field element
whose low `pad_bits` bits are zero when the predicate holds.
"""
import hashlib
import random
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import dealer
from . import gf as gfm
from .errors import ConfigError, CorrelationError, ProtocolError, TransportError
from .formula import eval_expr, parse
from .hashing import pre_hash
from .mzs import bmzs, bpmzs, bpmzsp, bpnmzs
from .net import InProcessNetwork, Stage, TcpEndpoint
from .session import (PSI_FAMILY, PSO_FAMILY, PSU_FAMILY, PartyCtx, SessionConfig, _literals,
                      derive_params)
from .shuffle import mshuffle
from .sspmt import sspeqt_budget


@dataclass
class PartyInput:
    elements: list
    payloads: dict = None  # element -> int (mod 2^64), MPSI-card-sum only


@dataclass
class PartyOutcome:
    pid: int
    output: object = None
    shares: dict = field(default_factory=dict)  # lane name -> final share vector
    stats: dict = field(default_factory=dict)
    transcripts: dict = field(default_factory=dict)
    log: list = field(default_factory=list)


@dataclass
class RunResult:
    func: str
    output: object
    outcomes: list
    duration: float
    hash_attempts: int = 0

    @property
    def stats(self):
        return [o.stats for o in self.outcomes]

    @property
    def transcripts(self):
        return [o.transcripts for o in self.outcomes]


# ------------------------------------------------------------------ inputs

def check_inputs(cfg: SessionConfig, inp: PartyInput):
    width = cfg.element_bits // 8
    elems = inp.elements
    if len(elems) > cfg.n:
        raise ConfigError(f"input set has {len(elems)} elements, more than n={cfg.n}")
    if len(set(elems)) != len(elems):
        raise ConfigError("input set contains duplicate elements")
    for x in elems:
        if not isinstance(x, bytes) or len(x) != width:
            raise ConfigError(f"elements must be {width}-byte strings")
    if cfg.func == "mpsi-card-sum":
        if inp.payloads is None or any(x not in inp.payloads for x in elems):
            raise ConfigError("every element needs a payload")


def int_element(v: int, element_bits=64) -> bytes:
    return int(v).to_bytes(element_bits // 8, "big")


def random_inputs(m, n, element_bits=64, seed=0, payloads=False):
    """m random sets of n elements drawn from a shared universe of 4n values."""
    rng = random.Random(f"mpso-inputs:{seed}:{m}:{n}:{element_bits}")
    universe = set()
    while len(universe) < 4 * n:
        universe.add(rng.getrandbits(element_bits))
    universe = sorted(universe)
    out = []
    for _ in range(m):
        elems = [int_element(v, element_bits) for v in rng.sample(universe, n)]
        pay = {x: rng.getrandbits(64) for x in elems} if payloads else None
        out.append(PartyInput(elems, pay))
    return out


# ------------------------------------------------------------------ plain oracle

def oracle(cfg: SessionConfig, inputs):
    sets = [set(i.elements) for i in inputs]
    f = cfg.func
    if f in PSI_FAMILY:
        inter = set.intersection(*sets)
        if f == "mpsi":
            return inter
        if f == "mpsi-card":
            return len(inter)
        total = sum(i.payloads[x] for x in inter for i in inputs) % (1 << 64)
        return (len(inter), total)
    if f in PSU_FAMILY:
        union = set.union(*sets)
        return union if f == "mpsu" else len(union)
    res = eval_expr(parse(cfg.formula, cfg.m), sets)
    return res if f == "mpso" else len(res)


# ------------------------------------------------------------------ planning

def make_plan(cfg: SessionConfig, params) -> dealer.Plan:
    m, B = cfg.m, params.B
    plan = dealer.Plan(m, params.k)
    everyone = range(1, m + 1)
    if cfg.func in PSI_FAMILY:
        plan.beaver(everyone, B, rand=True)
        if cfg.func == "mpsi-card":
            plan.shuffle(B, (dealer.LANE_FIELD,))
        elif cfg.func == "mpsi-card-sum":
            plan.shuffle(B, (dealer.LANE_FIELD, dealer.LANE_RING))
    elif cfg.func in PSU_FAMILY:
        for j in range(2, m + 1):
            for i in range(1, j):
                plan.bits(i, j, sspeqt_budget(B, params.gamma))
                plan.rot(i, j, B)
            plan.beaver(range(1, j + 1), B, rand=True)
        plan.shuffle((m - 1) * B, (dealer.LANE_FIELD,))
    else:
        from .formula import or_count
        for sf in params.cpf.subformulas:
            if sf.separation is None:
                continue
            for kind, i in _literals(sf):
                if kind == "out":
                    plan.bits(i, sf.pivot, sspeqt_budget(B, params.gamma))
                    plan.rot(i, sf.pivot, B)
            ors = or_count(sf.separation)
            if ors:
                plan.beaver(sf.involved, ors * B)
            plan.beaver(sf.involved, B, rand=True)
        plan.shuffle(params.cpf.s * B, (dealer.LANE_FIELD,))
    return plan


def master_seed_for(cfg: SessionConfig) -> bytes:
    return hashlib.sha256(b"dealer-master" + repr((cfg.seed, cfg.session)).encode()).digest()


# ------------------------------------------------------------------ building blocks of the party programs

def reconstruct(ctx, vec, lane, rnd=0):
    """Leader receives every share vector and returns the sum; others return None."""
    if ctx.is_leader:
        total = vec
        for j in ctx.net.peers:
            part = lane.from_bytes(ctx.net.recv(j, Stage.RECON, rnd)).reshape(vec.shape)
            total = lane.add(total, part)
        return total
    ctx.net.send(1, Stage.RECON, rnd, lane.to_bytes(vec))
    return None


def _embed(ctx, s, cuckoo, embed):
    """Pivot: code(x) into occupied bins (if `embed`), randomness into empty bins."""
    F = ctx.gf
    occ = np.asarray(cuckoo.occupied(), dtype=bool)
    s = s.copy()
    empty = ~occ
    if empty.any():
        s[empty] = F.rand_vec(ctx.rng("empty-bins"), int(empty.sum()))
    if embed and occ.any():
        pad = ctx.params.pad_bits
        codes = F.from_ints([int.from_bytes(cuckoo.element(b), "big") << pad for b in np.flatnonzero(occ)])
        s[occ] ^= codes
    return s


def _decode(ctx, total):
    pad = ctx.params.pad_bits
    width = ctx.params.element_bits // 8
    low = (1 << pad) - 1
    return {(v >> pad).to_bytes(width, "big") for v in ctx.gf.to_ints(total) if not v & low}


def _fault(fault, ctx, vec):
    """Test hook: corrupt this party's share before reconstruction."""
    if fault and fault.get("party") == ctx.pid:
        vec = vec.copy()
        idx = fault.get("index")
        rows = slice(None) if idx is None else idx  # no index: every row
        bit = fault.get("bit", 0)
        vec[rows, bit // 64] ^= np.uint64(1 << (bit % 64))
    return vec


def _psi(ctx, inp, export, fault):
    cfg, F = ctx.cfg, ctx.gf
    key = hashlib.sha256(b"prehash" + ctx.session_seed).digest()
    digests = pre_hash(inp.elements, cfg.m, cfg.n, cfg.sigma, key)
    elems = list(digests)
    cuckoo = ctx.agree_hashing(elems, cuckoo=ctx.is_leader)
    table = None if ctx.is_leader else ctx.simple_table(elems)
    field_lane = gfm.Lane(F)
    if cfg.func == "mpsi-card-sum":
        pay = {d: int(inp.payloads[x]) % (1 << 64) for d, x in digests.items()}
        s, w = bpmzsp(ctx, 1, cuckoo, table, pay)
    else:
        s = bpmzs(ctx, 1, cuckoo, table)
    if cfg.func == "mpsi":
        s = _fault(fault, ctx, s)
        if export:
            return PartyOutcome(ctx.pid, shares={"field": s})
        total = reconstruct(ctx, s, field_lane)
        if not ctx.is_leader:
            return PartyOutcome(ctx.pid)
        zero = np.flatnonzero(F.is_zero(total))
        found = {digests[cuckoo.element(b)] for b in zero if cuckoo.bins[b] is not None}
        return PartyOutcome(ctx.pid, output=found)
    s = mshuffle(ctx, s, ctx.store.take_shuffle(0, dealer.LANE_FIELD), field_lane, 0)
    if cfg.func == "mpsi-card":
        s = _fault(fault, ctx, s)
        if export:
            return PartyOutcome(ctx.pid, shares={"field": s})
        total = reconstruct(ctx, s, field_lane)
        return PartyOutcome(ctx.pid, output=int(F.is_zero(total).sum()) if ctx.is_leader else None)
    # card-sum: the leader folds its own payloads in before the payload shuffle
    ring = gfm.Lane(None)
    if ctx.is_leader:
        own = np.fromiter((pay[cuckoo.element(b)] if cuckoo.bins[b] is not None else 0
                           for b in range(ctx.params.B)), dtype=np.uint64, count=ctx.params.B)
        w = w + own
    w = mshuffle(ctx, w, ctx.store.take_shuffle(0, dealer.LANE_RING), ring, 1)
    s = _fault(fault, ctx, s)
    if export:
        return PartyOutcome(ctx.pid, shares={"field": s, "ring": w})
    total = reconstruct(ctx, s, field_lane)
    if ctx.is_leader:
        e = F.is_zero(total).astype(np.uint8)
        ctx.net.broadcast(Stage.INDICATOR, 0, np.packbits(e, bitorder="little").tobytes())
    else:
        raw = np.frombuffer(ctx.net.recv(1, Stage.INDICATOR, 0), dtype=np.uint8)
        e = np.unpackbits(raw, bitorder="little")[:ctx.params.B]
    part = np.uint64(w[e.astype(bool)].sum(dtype=np.uint64))
    card = int(e.sum())
    if not ctx.is_leader:
        ctx.net.send(1, Stage.PAYLOAD, 0, struct.pack("<Q", int(part)))
        return PartyOutcome(ctx.pid, output=card)
    total_sum = int(part)
    for j in ctx.net.peers:
        total_sum += struct.unpack("<Q", ctx.net.recv(j, Stage.PAYLOAD, 0))[0]
    return PartyOutcome(ctx.pid, output=(card, total_sum % (1 << 64)))


def _psu(ctx, inp, export, fault):
    cfg, F, B = ctx.cfg, ctx.gf, ctx.params.B
    pid, m = ctx.pid, cfg.m
    elems = list(inp.elements)
    cuckoo = ctx.agree_hashing(elems, cuckoo=pid >= 2)
    table = ctx.simple_table(elems) if pid < m else None
    embed = cfg.func == "mpsu"
    blocks = []
    for j in range(2, m + 1):
        if pid <= j:
            s = bpnmzs(ctx, j, cuckoo if pid == j else None, table if pid < j else None, ctx.params.gamma)
            if pid == j:
                s = _embed(ctx, s, cuckoo, embed)
        else:
            s = F.zeros(B)
        blocks.append(s)
    return _shuffle_and_open(ctx, np.concatenate(blocks), inp, export, fault)


def _pso(ctx, inp, export, fault):
    cfg, F, B = ctx.cfg, ctx.gf, ctx.params.B
    elems = list(inp.elements)
    cuckoo = ctx.agree_hashing(elems, cuckoo=True)
    table = ctx.simple_table(elems)
    embed = cfg.func == "mpso"
    blocks = []
    for sf in ctx.params.cpf.subformulas:
        j = sf.pivot
        if sf.separation is None:
            s = F.zeros(B)
        else:
            s = bmzs(ctx, sf.separation, j, sf.involved, cuckoo if ctx.pid == j else None, table,
                     ctx.params.gamma)
        if ctx.pid == j:
            s = _embed(ctx, s, cuckoo, embed)
        blocks.append(s)
    return _shuffle_and_open(ctx, np.concatenate(blocks), inp, export, fault)


def _shuffle_and_open(ctx, u, inp, export, fault):
    F = ctx.gf
    lane = gfm.Lane(F)
    u = mshuffle(ctx, u, ctx.store.take_shuffle(0, dealer.LANE_FIELD), lane, 0)
    u = _fault(fault, ctx, u)
    if export:
        return PartyOutcome(ctx.pid, shares={"field": u})
    total = reconstruct(ctx, u, lane)
    if not ctx.is_leader:
        return PartyOutcome(ctx.pid)
    f = ctx.cfg.func
    if f == "mpsu":
        return PartyOutcome(ctx.pid, output=_decode(ctx, total) | set(inp.elements))
    if f == "mpsu-card":
        return PartyOutcome(ctx.pid, output=int(F.is_zero(total).sum()) + len(inp.elements))
    if f == "mpso":
        return PartyOutcome(ctx.pid, output=_decode(ctx, total))
    return PartyOutcome(ctx.pid, output=int(F.is_zero(total).sum()))


def run_party(ctx: PartyCtx, inp: PartyInput, export=False, fault=None) -> PartyOutcome:
    check_inputs(ctx.cfg, inp)
    f = ctx.cfg.func
    if f in PSI_FAMILY:
        out = _psi(ctx, inp, export, fault)
    elif f in PSU_FAMILY:
        out = _psu(ctx, inp, export, fault)
    else:
        out = _pso(ctx, inp, export, fault)
    st = ctx.net.stats
    out.stats = {
        "party": ctx.pid,
        "bytes_sent": st.bytes_sent,
        "bytes_recv": st.bytes_recv,
        "frames_sent": st.frames_sent,
        "frames_recv": st.frames_recv,
        "rounds": len({(s, r) for _, _, s, r in ctx.net.log}),
        "hash_attempts": ctx.hash_attempts,
    }
    out.transcripts = ctx.net.transcript_hashes()
    out.log = list(ctx.net.log)
    return out


def export_shares(cfg, inputs, **kw):
    """Run up to (not including) reconstruction; returns {pid: {lane: share vector}}."""
    res = run_local(cfg, inputs, export=True, **kw)
    return {o.pid: o.shares for o in res.outcomes}


# ------------------------------------------------------------------ drivers

def run_local(cfg: SessionConfig, inputs, stores=None, strict=True, export=False, fault=None,
              timeout=None) -> RunResult:
    """All m parties as threads over the in-process network."""
    if len(inputs) != cfg.m:
        raise ConfigError(f"expected {cfg.m} inputs, got {len(inputs)}")
    params = derive_params(cfg, strict=strict)
    for inp in inputs:
        check_inputs(cfg, inp)
    if stores is None:
        stores = dealer.deal(make_plan(cfg, params), master_seed_for(cfg))
    net = InProcessNetwork(cfg.m, cfg.session, timeout=timeout)
    outcomes = [None] * cfg.m
    errors = [None] * cfg.m
    ctxs = [PartyCtx(pid, cfg, params, net.endpoint(pid), stores[pid], strict=strict)
            for pid in range(1, cfg.m + 1)]

    def body(i):
        try:
            outcomes[i] = run_party(ctxs[i], inputs[i], export=export, fault=fault)
        except BaseException as e:  # noqa: BLE001 - surfaced below
            errors[i] = e
            net.abort()
        finally:
            net.party_done(i + 1)

    t0 = time.perf_counter()
    threads = [threading.Thread(target=body, args=(i,), name=f"party-{i + 1}", daemon=True)
               for i in range(cfg.m)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    elapsed = time.perf_counter() - t0
    real = [e for e in errors if e is not None and not (isinstance(e, TransportError) and "aborted" in str(e))]
    if real or any(errors):
        raise (real or [e for e in errors if e is not None])[0]
    return RunResult(cfg.func, outcomes[0].output, outcomes, elapsed, ctxs[0].hash_attempts)


def run_tcp_party(cfg: SessionConfig, pid, inp, store, addrs, timeout=30.0, strict=True,
                  export=False) -> PartyOutcome:
    """One party of a TCP session; `addrs` maps party id -> (host, port)."""
    params = derive_params(cfg, strict=strict)
    if store.pid != pid or store.m != cfg.m or store.k != params.k:
        raise CorrelationError("correlation file does not match this party/session")
    ep = TcpEndpoint(pid, cfg.m, cfg.session, addrs, cfg.digest(), timeout=timeout)
    try:
        ep.connect()
        ctx = PartyCtx(pid, cfg, params, ep, store, strict=strict)
        t0 = time.perf_counter()
        out = run_party(ctx, inp, export=export)
        out.stats["duration"] = time.perf_counter() - t0
        return out
    finally:
        ep.close()


# ------------------------------------------------------------------ file formats

def read_set(path, element_bits=64):
    width = element_bits // 8
    out = []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                x = bytes.fromhex(line)
            except ValueError:
                raise ConfigError(f"{path}:{ln}: not a hex element")
            if len(x) != width:
                raise ConfigError(f"{path}:{ln}: element is {len(x)} bytes, expected {width}")
            out.append(x)
    return out


def read_payloads(path, element_bits=64):
    width = element_bits // 8
    out = {}
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                h, v = line.split(",")
                x = bytes.fromhex(h.strip())
                out[x] = int(v) % (1 << 64)
            except ValueError:
                raise ConfigError(f"{path}:{ln}: expected hex,decimal")
            if len(x) != width:
                raise ConfigError(f"{path}:{ln}: element is {len(x)} bytes, expected {width}")
    return out


def write_set(path, elems):
    with open(path, "w") as f:
        for x in sorted(elems):
            f.write(x.hex() + "\n")


def format_output(func, output):
    if isinstance(output, set):
        return "\n".join(x.hex() for x in sorted(output))
    if isinstance(output, tuple):
        return f"cardinality={output[0]}\nsum={output[1]}"
    return f"cardinality={output}"


SHARE_MAGIC = b"MPSOSHR1"


def shares_to_bytes(pid, m, lane_bits, vec) -> bytes:
    """lane_bits is the field width, or 0 for the 2^64 ring."""
    lane = gfm.Lane(gfm.field(lane_bits) if lane_bits else None)
    return SHARE_MAGIC + struct.pack("<BBHQ", pid, m, lane_bits, len(vec)) + lane.to_bytes(vec)


def shares_from_bytes(data):
    if data[:8] != SHARE_MAGIC:
        raise ConfigError("not a share file")
    pid, m, bits, n = struct.unpack_from("<BBHQ", data, 8)
    lane = gfm.Lane(gfm.field(bits) if bits else None)
    vec = lane.from_bytes(data[8 + 12:])
    if len(vec) != n:
        raise ConfigError("share file length mismatch")
    return pid, m, bits, vec
