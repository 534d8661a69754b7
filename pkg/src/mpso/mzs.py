"""Membership zero-sharing over bins.

A share vector is a (B, W) array per party; its secret in bin b is the XOR of
all parties' rows. Relaxed sharings come from OPPRF (membership) or ssPMT+ROT
(non-membership); AND is share addition, OR a Beaver product; a final
multiplication by a random nonzero b turns relaxed into standard sharings.

Characteristic 2 throughout, so -r = r.
"""
import math

import numpy as np

from . import dealer
from .errors import ConfigError, ProtocolError
from .formula import And, In, NotIn, Or, or_count
from .net import Stage
from .okvs import _mask_words
from .sspmt import bsspmt_receiver, bsspmt_sender, opprf_recv, opprf_send, sender_items


def _check_field(ctx, ors):
    if not ctx.strict:
        return
    need = ctx.cfg.sigma + math.log2(max(1, ors) * ctx.params.B)
    if ctx.gf.k < need:
        raise ConfigError(f"GF(2^{ctx.gf.k}) too small: formula needs {math.ceil(need)} bits")


# ------------------------------------------------------------------ relaxed instantiations

def rmzs_member_sender(ctx, pivot, table):
    """Sender share r; the pivot learns r_b exactly when its bin item is in our bin b."""
    F = ctx.gf
    r = F.rand_vec(ctx.rng("rmzs-member", pivot), table.B)
    opprf_send(ctx, pivot, table, r, F.k)
    return r


def rmzs_member_pivot(ctx, sender, cuckoo):
    return _mask_words(opprf_recv(ctx, sender, cuckoo, ctx.gf.k), ctx.gf.k)


def rmzs_nonmember_sender(ctx, pivot, table, gamma):
    """ssPMT bit e0 selects which ROT message becomes our share."""
    e0 = bsspmt_sender(ctx, pivot, table, gamma)
    corr = ctx.store.take_rot(ctx.pid, pivot, table.B)
    d = np.unpackbits(np.frombuffer(ctx.net.recv(pivot, Stage.ROT, 0), dtype=np.uint8),
                      bitorder="little")[:table.B]
    r0, r1 = dealer.rot_sender_outputs(d, corr)
    return np.where(e0.astype(bool)[:, None], r1, r0)


def rmzs_nonmember_pivot(ctx, sender, cuckoo, gamma):
    e1 = bsspmt_receiver(ctx, sender, cuckoo, gamma)
    corr = ctx.store.take_rot(sender, ctx.pid, cuckoo.B)
    d, share = dealer.rot_receiver_mask(e1, corr)
    ctx.net.send(sender, Stage.ROT, 0, np.packbits(d, bitorder="little").tobytes())
    return share


# ------------------------------------------------------------------ composition

def compose_and(u, v):
    return u ^ v


def compose_or(ctx, group, leader, u, v):
    triple = ctx.store.take_beaver(group, len(u))
    return dealer.beaver_mul(ctx, group, leader, u, v, triple)


def relax_to_standard(ctx, group, leader, r):
    triple = ctx.store.take_beaver(group, len(r), rand=True)
    return dealer.beaver_mul_random(ctx, group, leader, r, triple)


# ------------------------------------------------------------------ batch variants

def bmzs_relaxed(ctx, qprime, pivot, group, cuckoo=None, table=None, gamma=0):
    """Relaxed sharing of `qprime` (zero iff true) among `group`; no transformation."""
    B = ctx.params.B
    F = ctx.gf
    group = sorted(group)

    def literal(lit):
        i = lit.index
        member = isinstance(lit, In)
        if ctx.pid == pivot:
            if member:
                return rmzs_member_pivot(ctx, i, cuckoo)
            return rmzs_nonmember_pivot(ctx, i, cuckoo, gamma)
        if ctx.pid == i:
            if member:
                return rmzs_member_sender(ctx, pivot, table)
            return rmzs_nonmember_sender(ctx, pivot, table, gamma)
        return F.zeros(B)

    def emulate(p):
        if isinstance(p, (In, NotIn)):
            return literal(p)
        parts = [emulate(a) for a in p.args]
        acc = parts[0]
        for v in parts[1:]:
            acc = compose_and(acc, v) if isinstance(p, And) else compose_or(ctx, group, pivot, acc, v)
        return acc

    if not isinstance(qprime, (In, NotIn, And, Or)):
        raise ProtocolError(f"cannot emulate {qprime!r}")
    return emulate(qprime)


def bmzs(ctx, qprime, pivot, group, cuckoo=None, table=None, gamma=0):
    """Standard zero-sharing of `qprime` among `group` (uninvolved parties return zeros)."""
    if ctx.pid not in group:
        return ctx.gf.zeros(ctx.params.B)
    _check_field(ctx, or_count(qprime))
    r = bmzs_relaxed(ctx, qprime, pivot, group, cuckoo, table, gamma)
    return relax_to_standard(ctx, sorted(group), pivot, r)


def bpmzs(ctx, pivot, cuckoo=None, table=None):
    """All m parties: zero iff the pivot's bin item is in every other party's set."""
    others = [j for j in range(1, ctx.m + 1) if j != pivot]
    q = And(tuple(In(j) for j in others)) if len(others) > 1 else In(others[0])
    return bmzs(ctx, q, pivot, range(1, ctx.m + 1), cuckoo, table)


def bpnmzs(ctx, pivot, cuckoo=None, table=None, gamma=0):
    """Parties 1..pivot: zero iff the pivot's bin item is in none of the sets of 1..pivot-1."""
    lower = list(range(1, pivot))
    q = And(tuple(NotIn(j) for j in lower)) if len(lower) > 1 else NotIn(lower[0])
    return bmzs(ctx, q, pivot, range(1, pivot + 1), cuckoo, table, gamma)


def bpmzsp(ctx, pivot, cuckoo=None, table=None, payload=None):
    """Membership in all sets plus payload-sum sharing.

    Returns (s, w): s is a standard zero-sharing (field), w a relaxed sharing in
    the 2^64 ring of the sum of the non-pivot parties' payloads of the pivot's item.
    payload maps an untagged element to its payload (non-pivot parties).
    """
    F = ctx.gf
    B = ctx.params.B
    W = F.words
    gamma = 64 * W + 64
    group = list(range(1, ctx.m + 1))
    _check_field(ctx, 0)
    if ctx.pid == pivot:
        s = F.zeros(B)
        w = np.zeros(B, dtype=np.uint64)
        for j in group:
            if j == pivot:
                continue
            out = opprf_recv(ctx, j, cuckoo, gamma)
            s ^= _mask_words(out[:, :W].copy(), F.k)
            w += out[:, W]
    else:
        g = ctx.rng("rmzs-payload", pivot)
        s = F.rand_vec(g, B)
        w = g.u64(B)
        items, bins = sender_items(table)
        vals = np.fromiter((payload[x[:-1]] for _, x in items), dtype=np.uint64, count=len(items))
        per_key = np.concatenate([s[bins], (vals - w[bins])[:, None]], axis=1) if len(items) else np.zeros((0, W + 1), np.uint64)
        opprf_send(ctx, pivot, table, None, gamma, per_key=per_key)
    s = relax_to_standard(ctx, group, pivot, s)
    return s, w
