"""Session configuration, derived parameters and the per-party runtime context."""
import collections
import hashlib
import math
from dataclasses import dataclass, asdict, fields

from . import gf as gfm
from . import oprf
from .errors import ConfigError, HashingError
from .formula import compile_expr, cpf_cost, num_bins
from .hashing import (HashParams, REHASH_ATTEMPTS, cuckoo_insert, derive_hash_seed,
                      prehash_width, simple_hash)
from .net import Stage
from .prg import Prg

FUNCS = ("mpsi", "mpsi-card", "mpsi-card-sum", "mpsu", "mpsu-card", "mpso", "mpso-card")
PSI_FAMILY = ("mpsi", "mpsi-card", "mpsi-card-sum")
PSU_FAMILY = ("mpsu", "mpsu-card")
PSO_FAMILY = ("mpso", "mpso-card")
OPRF_MODES = ("group", "ideal")


@dataclass
class SessionConfig:
    """Everything all parties must agree on. Party-local settings live elsewhere."""
    func: str
    m: int
    n: int
    element_bits: int = 64
    field_bits: int = 0  # 0 = family default
    sigma: int = 40
    lam: int = 128
    seed: int = 0
    formula: str = ""
    oprf: str = "group"
    session: int = 1

    @classmethod
    def from_mapping(cls, d):
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for k, v in d.items():
            k = k.replace("-", "_")
            if k not in known:
                continue
            if v is None:
                continue
            kw[k] = int(v) if known[k].type in ("int", int) else str(v)
        missing = [k for k in ("func", "m", "n") if k not in kw]
        if missing:
            raise ConfigError(f"missing config keys: {', '.join(missing)}")
        return cls(**kw)

    def digest(self) -> bytes:
        items = sorted(asdict(self).items())
        return hashlib.sha256(repr(items).encode()).digest()

    def session_seed(self) -> bytes:
        return hashlib.sha256(b"session-seed" + self.seed.to_bytes(16, "little", signed=True)
                              + self.session.to_bytes(4, "little")).digest()


@dataclass
class Params:
    B: int
    k: int
    element_bits: int
    pad_bits: int  # l' for element-embedding lanes, 0 otherwise
    gamma: int  # ssPMT equality-test width
    sspmt_count: int
    prehash_bits: int
    cpf: object = None


def _log2(v):
    return math.log2(max(v, 1))


def derive_params(cfg: SessionConfig, strict=True) -> Params:
    """Validate `cfg` and compute the session parameters.

    strict=False skips the statistical field-size checks (used for small test fields).
    """
    if cfg.func not in FUNCS:
        raise ConfigError(f"unknown functionality {cfg.func!r}; expected one of {', '.join(FUNCS)}")
    if cfg.oprf not in OPRF_MODES:
        raise ConfigError(f"unknown OPRF mode {cfg.oprf!r}")
    if not 2 <= cfg.m <= 255:
        raise ConfigError("m must be between 2 and 255")
    if cfg.n < 1:
        raise ConfigError("n must be positive")
    if cfg.sigma < 0:
        raise ConfigError("sigma must be non-negative")
    if cfg.element_bits <= 0 or cfg.element_bits % 8:
        raise ConfigError("element width must be a positive multiple of 8 bits")
    B = num_bins(cfg.n)
    cpf = None
    sspmt = 0
    if cfg.func in PSI_FAMILY:
        k = cfg.field_bits or 64
        pad = 0
    else:
        k = cfg.field_bits or 128
        pad = k - cfg.element_bits
        if pad <= 0:
            raise ConfigError(f"element width {cfg.element_bits} leaves no padding in GF(2^{k})")
    if k not in gfm.SUPPORTED:
        raise ConfigError(f"unsupported field width {k}")
    if cfg.func in PSU_FAMILY:
        sspmt = cfg.m * (cfg.m - 1) // 2
        outputs = cfg.m - 1
    elif cfg.func in PSO_FAMILY:
        if not cfg.formula:
            raise ConfigError("MPSO needs a formula")
        cpf = compile_expr(cfg.formula, cfg.m)
        sspmt = sum(sum(1 for lit in _literals(sf) if lit[0] == "out") for sf in cpf.subformulas)
        outputs = cpf.s
        cost = cpf_cost(cpf, cfg.n, cfg.sigma)
        if strict and k < cost.min_field_bits:
            raise ConfigError(f"GF(2^{k}) too small for this formula: needs {cost.min_field_bits} bits")
    else:
        outputs = 1
    if strict:
        if cfg.func in PSI_FAMILY and k < cfg.sigma + _log2(B):
            raise ConfigError(f"GF(2^{k}) too small: need at least sigma + log2 B bits")
        if cfg.func not in PSI_FAMILY:
            need = cfg.sigma + _log2(outputs) + _log2(B)
            if pad < need:
                raise ConfigError(f"padding width {pad} below required {math.ceil(need)} bits")
    gamma = math.ceil(cfg.sigma + _log2(sspmt) + _log2(B)) if sspmt else 0
    gamma = max(gamma, 2) if sspmt else 0
    return Params(B=B, k=k, element_bits=cfg.element_bits, pad_bits=pad, gamma=gamma,
                  sspmt_count=sspmt, prehash_bits=prehash_width(cfg.m, cfg.n, cfg.sigma), cpf=cpf)


def _literals(sf):
    """(kind, party) for each literal of a subformula's separation part, in tree order."""
    from .formula import In, NotIn, And, Or
    out = []

    def walk(p):
        if isinstance(p, In):
            out.append(("in", p.index))
        elif isinstance(p, NotIn):
            out.append(("out", p.index))
        elif isinstance(p, (And, Or)):
            for a in p.args:
                walk(a)
    if sf.separation is not None:
        walk(sf.separation)
    return out


class PartyCtx:
    """Runtime state for one party: identity, transport, correlations and randomness."""

    def __init__(self, pid, cfg: SessionConfig, params: Params, net, store, strict=True):
        self.pid = pid
        self.m = cfg.m
        self.cfg = cfg
        self.params = params
        self.net = net
        self.store = store
        self.strict = strict
        self.gf = gfm.field(params.k)
        self.prg = Prg(cfg.seed, "party", cfg.session, pid)
        self.session_seed = cfg.session_seed()
        self._labels = collections.Counter()
        self._prf = {}  # (role, peer) -> PrfValues
        self._prf_items = {}
        self._blinded = None
        self.opprf_count = collections.Counter()  # (sender, receiver) -> invocations
        self.hash_attempts = 0
        self.hash_params = None

    @property
    def is_leader(self):
        return self.pid == 1

    def rng(self, *label):
        """A fresh private stream; repeated labels get distinct streams."""
        self._labels[label] += 1
        return self.prg.fork(*label, self._labels[label])

    # ---- hashing agreement
    def agree_hashing(self, elements, cuckoo: bool):
        """Find a bin-hash seed every Cuckoo-hashing party can use.

        Each party reports success (or n/a) to the leader, who broadcasts the
        attempt to settle on. Returns this party's Cuckoo table (or None).
        """
        B = self.params.B
        for attempt in range(REHASH_ATTEMPTS):
            p = HashParams(derive_hash_seed(self.session_seed, attempt), B)
            table, status = None, 2
            if cuckoo:
                try:
                    table = cuckoo_insert(elements, p)
                    status = 1
                except HashingError:
                    status = 0
            if self.is_leader:
                ok = status != 0
                for j in self.net.peers:
                    ok &= self.net.recv(j, Stage.HASH, 2 * attempt)[0] != 0
                self.net.broadcast(Stage.HASH, 2 * attempt + 1, bytes([ok]))
            else:
                self.net.send(1, Stage.HASH, 2 * attempt, bytes([status]))
                ok = self.net.recv(1, Stage.HASH, 2 * attempt + 1)[0] == 1
            if ok:
                self.hash_attempts = attempt + 1
                self.hash_params = p
                return table
        raise HashingError(f"Cuckoo hashing failed after {REHASH_ATTEMPTS} seeds")

    def simple_table(self, elements):
        return simple_hash(elements, self.hash_params)

    # ---- PRF values, one OPRF per ordered pair per session
    def _ideal_key(self, sender, receiver):
        return hashlib.blake2b(b"ideal-oprf" + bytes([sender, receiver]), key=self.session_seed,
                               digest_size=32).digest()

    def prf_as_receiver(self, sender, items):
        """PRF values of the sender's key on our query items (list of (tag, x))."""
        key = ("recv", sender)
        if key in self._prf:
            if self._prf_items[key] != items:
                raise ConfigError("OPRF queries changed within a session")
            return self._prf[key]
        if self.cfg.oprf == "ideal":
            vals = oprf.sender_values(None, items, ideal_key=self._ideal_key(sender, self.pid))
        else:
            # one blinded batch serves every sender queried with the same items
            if self._blinded is None or self._blinded[0] != items:
                r, unblind = oprf.blinding_pair(self.rng("oprf-blind"))
                self._blinded = (items, unblind, oprf.receiver_blind(items, r))
            _, unblind, blinded = self._blinded
            self.net.send(sender, Stage.OPRF, 0, blinded)
            vals = oprf.receiver_finalize(items, unblind, self.net.recv(sender, Stage.OPRF, 1))
        self._prf[key] = vals
        self._prf_items[key] = items
        return vals

    def prf_as_sender(self, receiver, items):
        """PRF values under our key for `receiver` on our own items; answers its OPRF queries once."""
        key = ("send", receiver)
        if key in self._prf:
            if self._prf_items[key] != items:
                raise ConfigError("OPRF sender items changed within a session")
            return self._prf[key]
        if self.cfg.oprf == "ideal":
            vals = oprf.sender_values(None, items, ideal_key=self._ideal_key(self.pid, receiver))
        else:
            k = oprf.OprfKey.generate(self.rng("oprf-key", receiver))
            # answer first so the receiver is not kept waiting on our own evaluation
            self.net.send(receiver, Stage.OPRF, 1, oprf.sender_respond(k, self.net.recv(receiver, Stage.OPRF, 0)))
            vals = oprf.sender_values(k, items)
        self._prf[key] = vals
        self._prf_items[key] = items
        return vals

    def opprf_domain(self, sender, receiver):
        """Distinct output domain for each OPPRF invocation between one ordered pair."""
        c = self.opprf_count[(sender, receiver)]
        self.opprf_count[(sender, receiver)] += 1
        return c.to_bytes(4, "little")
