"""Run arbitrary party bodies over the in-process mesh with dealt correlations."""
import threading

from mpso import dealer
from mpso.net import InProcessNetwork
from mpso.session import PartyCtx, SessionConfig, derive_params


def make_ctxs(m, plan=None, k=64, n=64, sigma=40, oprf="group", seed=0, strict=False):
    cfg = SessionConfig(func="mpsi", m=m, n=n, field_bits=k, sigma=sigma, oprf=oprf, seed=seed)
    params = derive_params(cfg, strict=False)
    if plan is None:
        plan = dealer.Plan(m, k)
    stores = dealer.deal(plan, b"harness-%d" % seed)
    net = InProcessNetwork(m)
    ctxs = [PartyCtx(pid, cfg, params, net.endpoint(pid), stores[pid], strict=strict)
            for pid in range(1, m + 1)]
    return ctxs, net, stores


def run_parties(ctxs, net, body):
    """body(ctx) in one thread per party; returns the list of results in party order."""
    m = len(ctxs)
    out = [None] * m
    err = [None] * m

    def go(i):
        try:
            out[i] = body(ctxs[i])
        except BaseException as e:  # noqa: BLE001
            err[i] = e
            net.abort()
        finally:
            net.party_done(i + 1)

    ts = [threading.Thread(target=go, args=(i,), daemon=True) for i in range(m)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    for e in err:
        if e is not None and "aborted" not in str(e):
            raise e
    for e in err:
        if e is not None:
            raise e
    return out


def xor_all(vectors):
    acc = vectors[0].copy()
    for v in vectors[1:]:
        acc ^= v
    return acc


def element(v, width=8):
    return int(v).to_bytes(width, "big")


def tables(ctxs, sets, pivots=(), seed=b"harness-bins" * 2):
    """Cuckoo tables for `pivots`, simple tables for everyone, under one fixed hash seed.

    Returns ({pid: cuckoo}, {pid: simple}).
    """
    from mpso.hashing import HashParams, cuckoo_insert, simple_hash
    p = HashParams(seed[:16], ctxs[0].params.B)
    for ctx in ctxs:
        ctx.hash_params = p
    cuckoo = {pid: cuckoo_insert([element(x) for x in sets[pid - 1]], p, width=8) for pid in pivots}
    simple = {ctx.pid: simple_hash([element(x) for x in sets[ctx.pid - 1]], p) for ctx in ctxs}
    return cuckoo, simple


def free_ports(k):
    import socket
    socks = [socket.socket() for _ in range(k)]
    for s in socks:
        s.bind(("127.0.0.1", 0))
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports


def write_config(path, conf):
    with open(path, "w") as f:
        for k, v in conf.items():
            f.write(f"{k} = {v}\n")
    return str(path)


def cli(*args, timeout=120):
    """Run the CLI as a subprocess; returns CompletedProcess with text output."""
    import subprocess
    import sys
    return subprocess.run([sys.executable, "-m", "mpso", *map(str, args)], capture_output=True,
                          text=True, timeout=timeout)


def tcp_session(workdir, conf, inputs=None, timeout=60, extra=None):
    """Deal correlations for `conf` and run every party as its own process over loopback TCP.

    inputs: list of per-party set files, or None for `--random`. extra: {pid: [args]}.
    Returns the list of CompletedProcess objects in party order.
    """
    import os
    import subprocess
    import sys
    m = int(conf["m"])
    cfg_path = write_config(os.path.join(workdir, "session.conf"), conf)
    corr = os.path.join(workdir, "corr")
    r = cli("dealer", "--from-plan", cfg_path, "--out-dir", corr)
    if r.returncode:
        raise RuntimeError(r.stderr)
    peers = ",".join(f"127.0.0.1:{p}" for p in free_ports(m))
    procs = []
    for pid in range(1, m + 1):
        args = [sys.executable, "-m", "mpso", "party", "--config", cfg_path, "--party-id", str(pid),
                "--correlations", os.path.join(corr, f"party{pid}.corr"), "--peers", peers,
                "--timeout", str(timeout),
                "--transcript-out", os.path.join(workdir, f"transcript{pid}.json"),
                "--stats-out", os.path.join(workdir, f"stats{pid}.csv")]
        args += ["--input", inputs[pid - 1]] if inputs else ["--random"]
        args += [str(a) for a in (extra or {}).get(pid, [])]
        procs.append(subprocess.Popen(args, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True))
    out = []
    for p in procs:
        so, se = p.communicate(timeout=timeout + 60)
        out.append(subprocess.CompletedProcess(p.args, p.returncode, so, se))
    return out
