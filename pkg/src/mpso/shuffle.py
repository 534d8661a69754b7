"""Multi-party secret-shared shuffle with dealer-provided correlations.

Round i (i = 1..m): every party j != i sends x_j - a_j to P_i, who outputs
pi_i(sum of those + x_i) + delta_i; the others output b_j. Round i's
correlation satisfies delta_i = pi_i(sum_j a_j) - sum_j b_j.
"""
import numpy as np

from .errors import ProtocolError
from .net import Stage

LANE_ROUND_STRIDE = 256


def mshuffle(ctx, x, corr, lane, lane_id=0):
    """Reshare-and-permute x (this party's share vector) through all m rounds.

    The permutation applied is pi_m o ... o pi_1, with pi(v) = v[perm].
    """
    n = len(x)
    for i in range(1, ctx.m + 1):
        rnd = lane_id * LANE_ROUND_STRIDE + i
        if ctx.pid == i:
            acc = x
            for j in ctx.net.peers:
                part = lane.from_bytes(ctx.net.recv(j, Stage.SHUFFLE, rnd))
                if len(part) != n:
                    raise ProtocolError("shuffle vector length mismatch")
                acc = lane.add(acc, part.reshape(x.shape))
            perm = corr.perm(i).astype(np.int64)
            if len(perm) != n:
                raise ProtocolError("shuffle correlation length mismatch")
            x = lane.add(acc[perm], corr.delta(i))
        else:
            a, b = corr.a(i), corr.b(i)
            if len(a) != n:
                raise ProtocolError("shuffle correlation length mismatch")
            ctx.net.send(i, Stage.SHUFFLE, rnd, lane.to_bytes(lane.sub(x, a)))
            x = b.copy()
    return x
