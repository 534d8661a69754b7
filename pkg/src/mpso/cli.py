"""Command-line entry points: dealer, party, run-local, compile, verify, bench."""
import argparse
import csv
import io
import json
import os
import sys

from . import dealer
from .errors import ConfigError, MpsoError
from .formula import compile_expr, cpf_cost, format_cpf
from .protocols import (PartyInput, format_output, make_plan, master_seed_for, oracle, random_inputs,
                        read_payloads, read_set, run_local, run_tcp_party)
from .session import FUNCS, SessionConfig, derive_params

EXIT_OK, EXIT_CONFIG, EXIT_CORRELATION, EXIT_PROTOCOL, EXIT_IO = 0, 2, 3, 4, 5

STATS_FIELDS = ["party", "bytes_sent", "bytes_recv", "frames_sent", "frames_recv", "rounds",
                "hash_attempts", "duration"]


# ------------------------------------------------------------------ config handling

def read_config(path):
    """Flat `key = value` text; '#' starts a comment."""
    out = {}
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected key = value")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip().strip('"')
    return out


def merged(args, keys):
    """Config file values overridden by any flag given on the command line."""
    conf = read_config(args.config) if getattr(args, "config", None) else {}
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            conf[k] = v
    return conf


def parse_kv(tokens):
    out = {}
    for t in tokens or ():
        if "=" not in t:
            raise ConfigError(f"expected key=value, got {t!r}")
        k, v = t.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _session_flags(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--func", choices=FUNCS)
    p.add_argument("--m", "--parties", dest="m", type=int)
    p.add_argument("--n", type=int, help="set size bound")
    p.add_argument("--formula")
    p.add_argument("--seed", type=int)
    p.add_argument("--session", type=int)
    p.add_argument("--oprf", choices=("group", "ideal"))
    p.add_argument("--element-bits", dest="element_bits", type=int)
    p.add_argument("--field-bits", dest="field_bits", type=int)
    p.add_argument("--sigma", type=int)


SESSION_KEYS = ("func", "m", "n", "formula", "seed", "session", "oprf", "element_bits", "field_bits", "sigma")


def _split_list(v):
    if v is None:
        return []
    if isinstance(v, (list, tuple)):
        return list(v)
    return [x.strip() for x in str(v).split(",") if x.strip()]


def _load_inputs(conf, cfg):
    """Inputs from `inputs`/`payloads` file lists or `random` (n=.. m=..) settings."""
    rnd = conf.get("random")
    if rnd:
        return random_inputs(cfg.m, cfg.n, cfg.element_bits, seed=cfg.seed,
                             payloads=cfg.func == "mpsi-card-sum")
    files = _split_list(conf.get("inputs"))
    if len(files) != cfg.m:
        raise ConfigError(f"need {cfg.m} input files (or --random), got {len(files)}")
    pays = _split_list(conf.get("payloads"))
    out = []
    for i, path in enumerate(files):
        elems = read_set(path, cfg.element_bits)
        pay = read_payloads(pays[i], cfg.element_bits) if i < len(pays) else None
        out.append(PartyInput(elems, pay))
    return out


def _apply_random(conf, args):
    if getattr(args, "random", None):
        kv = parse_kv(args.random)
        conf["random"] = "1"
        for k in ("n", "m"):
            if k in kv and getattr(args, k, None) is None:
                conf[k] = kv[k]
    return conf


def _write_stats(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=STATS_FIELDS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def _print_stats(rows, out):
    out.write("party  bytes_sent  bytes_recv  frames  rounds\n")
    for r in rows:
        out.write(f"{r['party']:>5}  {r['bytes_sent']:>10}  {r['bytes_recv']:>10}  "
                  f"{r['frames_sent']:>6}  {r['rounds']:>6}\n")


# ------------------------------------------------------------------ commands

def cmd_compile(args, out):
    m = args.m
    cpf = compile_expr(args.formula, m)
    out.write(format_cpf(cpf, cpf_cost(cpf, args.n, args.sigma)) + "\n")
    return EXIT_OK


def cmd_dealer(args, out):
    os.makedirs(args.out_dir, exist_ok=True)
    if args.from_plan:
        conf = read_config(args.from_plan)
        if args.seed is not None:
            conf["seed"] = args.seed
        cfg = SessionConfig.from_mapping(conf)
        params = derive_params(cfg)
        plan = make_plan(cfg, params)
        master = master_seed_for(cfg)
    else:
        if not args.parties:
            raise ConfigError("dealer needs --parties or --from-plan")
        m = args.parties
        plan = dealer.Plan(m, args.field_bits)
        everyone = range(1, m + 1)
        if args.beaver:
            plan.beaver(everyone, args.beaver)
        if args.beaver_rand:
            plan.beaver(everyone, args.beaver_rand, rand=True)
        for i in everyone:
            for j in everyone:
                if i != j:
                    if args.bit_triples:
                        plan.bits(i, j, args.bit_triples)
                    if args.rots:
                        plan.rot(i, j, args.rots)
        if args.shuffle:
            plan.shuffle(args.shuffle, (dealer.LANE_FIELD, dealer.LANE_RING))
        cfg = SessionConfig(func="mpsi", m=m, n=1, seed=args.seed or 0)
        master = master_seed_for(cfg)
    stores = dealer.deal(plan, master)
    for pid, store in stores.items():
        path = os.path.join(args.out_dir, f"party{pid}.corr")
        store.save(path)
        out.write(f"wrote {path}\n")
    for k, v in plan.summary().items():
        out.write(f"{k}={v}\n")
    return EXIT_OK


def _addr(s):
    host, _, port = s.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError(f"bad address {s!r}; expected host:port")
    return host, int(port)


def cmd_party(args, out):
    conf = _apply_random(merged(args, SESSION_KEYS + ("party_id", "input", "payloads", "correlations", "peers",
                                                      "output", "stats_out", "timeout", "transcript_out")), args)
    cfg = SessionConfig.from_mapping(conf)
    derive_params(cfg)
    pid = int(conf.get("party_id") or 0)
    if not 1 <= pid <= cfg.m:
        raise ConfigError("party id must be between 1 and m")
    peers = _split_list(conf.get("peers"))
    if len(peers) != cfg.m:
        raise ConfigError(f"peers must list {cfg.m} host:port addresses in party order")
    addrs = {i + 1: _addr(p) for i, p in enumerate(peers)}
    if not conf.get("correlations"):
        raise ConfigError("missing correlation file (--correlations)")
    if conf.get("input"):
        elems = read_set(conf["input"], cfg.element_bits)
        pay = read_payloads(conf["payloads"], cfg.element_bits) if conf.get("payloads") else None
        inp = PartyInput(elems, pay)
    elif conf.get("random"):
        inp = random_inputs(cfg.m, cfg.n, cfg.element_bits, seed=cfg.seed,
                            payloads=cfg.func == "mpsi-card-sum")[pid - 1]
    else:
        raise ConfigError("missing input set (--input or --random)")
    store = dealer.CorrelationStore.load(conf["correlations"])
    timeout = float(conf.get("timeout") or 30)
    res = run_tcp_party(cfg, pid, inp, store, addrs, timeout=timeout)
    if res.output is not None:
        text = format_output(cfg.func, res.output)
        if conf.get("output"):
            with open(conf["output"], "w") as f:
                f.write(text + ("\n" if text else ""))
        else:
            out.write(text + ("\n" if text else ""))
    _print_stats([res.stats], out)
    if conf.get("stats_out"):
        _write_stats(conf["stats_out"], [res.stats])
    if conf.get("transcript_out"):
        with open(conf["transcript_out"], "w") as f:
            json.dump({"party": pid, "transcripts": res.transcripts}, f, indent=1, sort_keys=True)
    return EXIT_OK


def _local(args):
    conf = _apply_random(merged(args, SESSION_KEYS + ("inputs", "payloads", "output", "stats_out")), args)
    cfg = SessionConfig.from_mapping(conf)
    derive_params(cfg)
    inputs = _load_inputs(conf, cfg)
    fault = {"party": args.inject_fault} if getattr(args, "inject_fault", None) else None
    res = run_local(cfg, inputs, fault=fault)
    return conf, cfg, inputs, res


def _report(conf, cfg, res, out):
    text = format_output(cfg.func, res.output)
    if conf.get("output"):
        with open(conf["output"], "w") as f:
            f.write(text + ("\n" if text else ""))
    else:
        out.write(text + ("\n" if text else ""))
    rows = res.stats
    for r in rows:
        r.setdefault("duration", round(res.duration, 6))
    _print_stats(rows, out)
    out.write(f"duration={res.duration:.3f}s\n")
    if conf.get("stats_out"):
        _write_stats(conf["stats_out"], rows)


def verdict(cfg, inputs, output):
    return output == oracle(cfg, inputs)


def cmd_run_local(args, out):
    conf, cfg, inputs, res = _local(args)
    _report(conf, cfg, res, out)
    if args.verify:
        ok = verdict(cfg, inputs, res.output)
        out.write("verify: PASS\n" if ok else "verify: FAIL\n")
        return EXIT_OK if ok else 1
    return EXIT_OK


def cmd_verify(args, out):
    args.verify = True
    return cmd_run_local(args, out)


def cmd_bench(args, out):
    funcs = _split_list(args.funcs)
    ms = [int(x) for x in _split_list(args.ms)]
    ns = [int(x) for x in _split_list(args.ns)]
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["func", "m", "n", "rep", "seconds", "leader_bytes", "client_bytes", "total_bytes", "correct"])
    for func in funcs:
        if func not in FUNCS:
            raise ConfigError(f"unknown functionality {func!r}")
        for m in ms:
            for n in ns:
                for rep in range(args.repeat):
                    cfg = SessionConfig(func=func, m=m, n=n, seed=args.seed + rep, oprf=args.oprf,
                                        formula=args.formula or "")
                    inputs = random_inputs(m, n, seed=args.seed + rep, payloads=func == "mpsi-card-sum")
                    res = run_local(cfg, inputs)
                    st = res.stats
                    client = st[1]["bytes_sent"] + st[1]["bytes_recv"]
                    w.writerow([func, m, n, rep, f"{res.duration:.4f}",
                                st[0]["bytes_sent"] + st[0]["bytes_recv"], client,
                                sum(s["bytes_sent"] for s in st), int(verdict(cfg, inputs, res.output))])
    text = buf.getvalue()
    out.write(text)
    if args.stats_out:
        with open(args.stats_out, "w") as f:
            f.write(text)
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="mpso", description="Multi-party private set operations")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("compile", help="compile a set expression and print its cost")
    p.add_argument("formula")
    p.add_argument("--m", type=int)
    p.add_argument("--n", type=int, default=1 << 10)
    p.add_argument("--sigma", type=int, default=40)
    p.set_defaults(fn=cmd_compile)

    p = sub.add_parser("dealer", help="generate per-party correlation files")
    p.add_argument("--from-plan", dest="from_plan", help="session config to size the budget from")
    p.add_argument("--parties", type=int)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--field-bits", dest="field_bits", type=int, default=64)
    p.add_argument("--beaver", type=int, default=0, help="Beaver triples for the full party set")
    p.add_argument("--beaver-rand", dest="beaver_rand", type=int, default=0,
                   help="triples with nonzero multiplier for the full party set")
    p.add_argument("--bit-triples", dest="bit_triples", type=int, default=0, help="per ordered pair")
    p.add_argument("--rots", type=int, default=0, help="per ordered pair")
    p.add_argument("--shuffle", type=int, default=0, help="length of one shuffle correlation")
    p.set_defaults(fn=cmd_dealer)

    p = sub.add_parser("party", help="join a TCP session as one party")
    _session_flags(p)
    p.add_argument("--party-id", dest="party_id", type=int)
    p.add_argument("--input")
    p.add_argument("--payloads")
    p.add_argument("--random", nargs="*", help="use the seeded random input of this party")
    p.add_argument("--correlations")
    p.add_argument("--peers", help="comma-separated host:port per party, in party order")
    p.add_argument("--timeout", type=float)
    p.add_argument("--output")
    p.add_argument("--stats-out", dest="stats_out")
    p.add_argument("--transcript-out", dest="transcript_out")
    p.set_defaults(fn=cmd_party)

    for name, fn in (("run-local", cmd_run_local), ("verify", cmd_verify)):
        p = sub.add_parser(name, help="run all parties in-process" if name == "run-local"
                           else "run in-process and compare with the plaintext oracle")
        _session_flags(p)
        p.add_argument("--random", nargs="*", metavar="KEY=VALUE", help="random inputs, e.g. n=256 m=3")
        p.add_argument("--inputs", help="comma-separated input files, one per party")
        p.add_argument("--payloads", help="comma-separated payload files, one per party")
        p.add_argument("--output")
        p.add_argument("--stats-out", dest="stats_out")
        p.add_argument("--verify", action="store_true", help="compare with the plaintext oracle")
        p.add_argument("--inject-fault", dest="inject_fault", type=int, help=argparse.SUPPRESS)
        p.set_defaults(fn=fn)

    p = sub.add_parser("bench", help="time a matrix of runs; CSV output")
    p.add_argument("--funcs", default="mpsi")
    p.add_argument("--ms", default="3")
    p.add_argument("--ns", default="256,1024")
    p.add_argument("--repeat", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oprf", choices=("group", "ideal"), default="group")
    p.add_argument("--formula")
    p.add_argument("--stats-out", dest="stats_out")
    p.set_defaults(fn=cmd_bench)
    return ap


def main(argv=None, out=None):
    out = out or sys.stdout
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "random", None) == []:
        args.random = ["_=1"]
    try:
        return args.fn(args, out)
    except MpsoError as e:
        sys.stderr.write(f"error ({type(e).__name__}): {e}\n")
        return e.exit_code
    except OSError as e:
        sys.stderr.write(f"io error: {e}\n")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
