"""Secret-shared private membership test: batch OPPRF followed by a GMW equality test.

For every bin b the sender S holds a set X_b (simple-hash bin) and the receiver
R one item x_b (Cuckoo bin). They end with bits e_S[b] ^ e_R[b] = [x_b in X_b].
"""
import numpy as np

from . import oprf
from .errors import ProtocolError
from .net import Stage
from .okvs import OkvsEncoding, words_for, _mask_words


# ------------------------------------------------------------------ batch OPPRF over bins

def sender_items(table):
    """Flattened (bin, item) list of a simple table plus the bin of each entry (cached)."""
    cached = getattr(table, "_flat", None)
    if cached is None:
        items, bins = [], []
        for b, content in enumerate(table.bins):
            for x in content:
                items.append((b, x))
                bins.append(b)
        cached = (items, np.asarray(bins, dtype=np.int64))
        table._flat = cached
    return cached


def receiver_items(cuckoo):
    cached = getattr(cuckoo, "_flat", None)
    if cached is None:
        cached = list(enumerate(cuckoo.items()))
        cuckoo._flat = cached
    return cached


def opprf_send(ctx, receiver, table, targets, gamma, per_key=None):
    """Program every item of bin b to targets[b] and send the hint to `receiver`.

    per_key, if given, replaces the per-bin targets with one row per flattened item.
    """
    items, bins = sender_items(table)
    vals = ctx.prf_as_sender(receiver, items)
    domain = ctx.opprf_domain(ctx.pid, receiver)
    if per_key is None:
        per_key = targets[bins] if len(bins) else np.zeros((0, targets.shape[1]), np.uint64)
    hint = oprf.opprf_program(vals, per_key, gamma, ctx.rng("opprf", receiver), domain)
    ctx.net.send(receiver, Stage.OPPRF, 0, hint.to_bytes())


def opprf_recv(ctx, sender, cuckoo, gamma):
    """Per-bin OPPRF outputs for our Cuckoo items, as a (B, words) array."""
    items = receiver_items(cuckoo)
    vals = ctx.prf_as_receiver(sender, items)
    domain = ctx.opprf_domain(sender, ctx.pid)
    hint = OkvsEncoding.from_bytes(ctx.net.recv(sender, Stage.OPPRF, 0))
    if hint.gamma != gamma:
        raise ProtocolError(f"OPPRF hint width {hint.gamma}, expected {gamma}")
    return oprf.opprf_receive(vals, hint, domain)


# ------------------------------------------------------------------ GMW equality

def words_to_bits(arr, gamma):
    """(N, words) uint64 -> (N, gamma) uint8 bit matrix, little-endian bit order."""
    raw = np.ascontiguousarray(arr, dtype="<u8").view(np.uint8).reshape(len(arr), -1)
    return np.unpackbits(raw, axis=1, bitorder="little")[:, :gamma]


def _exchange(ctx, peer, rnd, bits):
    ctx.net.send(peer, Stage.GMW, rnd, np.packbits(bits, bitorder="little").tobytes())
    data = ctx.net.recv(peer, Stage.GMW, rnd)
    got = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    if len(got) < len(bits):
        raise ProtocolError("short GMW message")
    return got[:len(bits)]


def and_tree(ctx, peer, is_first, x, triples):
    """AND of every row of the XOR-shared bit matrix x, left-balanced tree.

    triples: (a, b, c) flat bit arrays with at least rows*(cols-1) entries.
    `is_first` marks the party that adds the public d&e term.
    """
    a_all, b_all, c_all = triples
    rows, w = x.shape
    used = 0
    layer = 0
    while w > 1:
        p = w // 2
        left = x[:, 0:2 * p:2]
        right = x[:, 1:2 * p:2]
        cnt = rows * p
        a = a_all[used:used + cnt].reshape(rows, p)
        b = b_all[used:used + cnt].reshape(rows, p)
        c = c_all[used:used + cnt].reshape(rows, p)
        used += cnt
        d_mine = left ^ a
        e_mine = right ^ b
        opened = _exchange(ctx, peer, layer, np.concatenate([d_mine.ravel(), e_mine.ravel()]))
        d = (d_mine.ravel() ^ opened[:cnt]).reshape(rows, p)
        e = (e_mine.ravel() ^ opened[cnt:]).reshape(rows, p)
        z = c ^ (d & b) ^ (e & a)
        if is_first:
            z ^= d & e
        x = z if w % 2 == 0 else np.concatenate([z, x[:, -1:]], axis=1)
        w = x.shape[1]
        layer += 1
    return x[:, 0].astype(np.uint8)


def sspeqt(ctx, peer, is_sender, value, gamma, triples):
    """Shared equality bit per row: S inputs value=t, R inputs value=f; shares XOR to [t == f]."""
    bits = words_to_bits(value, gamma)
    if is_sender:
        bits = bits ^ np.uint8(1)
    return and_tree(ctx, peer, is_sender, bits, triples)


def sspeqt_budget(B, gamma):
    return B * (gamma - 1)


def bsspmt_sender(ctx, receiver, table, gamma):
    """Sender half: returns e_S (B,) bits."""
    B = table.B
    t = _mask_words(ctx.rng("sspmt-target", receiver).u64(B * words_for(gamma)).reshape(B, -1), gamma)
    opprf_send(ctx, receiver, table, t, gamma)
    triples = ctx.store.take_bits(ctx.pid, receiver, sspeqt_budget(B, gamma))
    return sspeqt(ctx, receiver, True, t, gamma, triples)


def bsspmt_receiver(ctx, sender, cuckoo, gamma):
    """Receiver half: returns e_R (B,) bits."""
    f = opprf_recv(ctx, sender, cuckoo, gamma)
    triples = ctx.store.take_bits(sender, ctx.pid, sspeqt_budget(cuckoo.B, gamma))
    return sspeqt(ctx, sender, False, f, gamma, triples)
