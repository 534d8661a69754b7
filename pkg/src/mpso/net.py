"""Transports: an in-process mesh and TCP, with the same framing and accounting.

Frame layout (little-endian): u32 payload length, u16 session, u8 stage,
u16 round, payload. Receivers buffer frames that arrive ahead of the stage
and round they are waiting for.
"""
import collections
import enum
import hashlib
import queue
import socket
import struct
import threading
import time

from .errors import ConfigError, TransportError

HEADER = struct.Struct("<IHBH")
MAX_FRAME = 64 << 20
DEFAULT_TIMEOUT = 30.0
_POLL = 0.05


class Stage(enum.IntEnum):
    HELLO = 0
    HASH = 1
    OPRF = 2
    OPPRF = 3
    GMW = 4
    ROT = 5
    BEAVER = 6
    SHUFFLE = 7
    RECON = 8
    INDICATOR = 9
    PAYLOAD = 10


def encode_frame(session: int, stage: int, rnd: int, payload: bytes) -> bytes:
    if len(payload) > MAX_FRAME:
        raise TransportError(f"frame of {len(payload)} bytes exceeds size cap")
    return HEADER.pack(len(payload), session, int(stage), rnd) + payload


class Stats:
    def __init__(self):
        self.sent = collections.Counter()  # peer -> bytes
        self.recv = collections.Counter()
        self.frames_sent = 0
        self.frames_recv = 0
        self.stage_bytes = collections.Counter()

    @property
    def bytes_sent(self):
        return sum(self.sent.values())

    @property
    def bytes_recv(self):
        return sum(self.recv.values())


class Endpoint:
    """One party's view of the mesh. Subclasses provide _push and _pull."""

    def __init__(self, pid, m, session, timeout=DEFAULT_TIMEOUT):
        self.pid = pid
        self.m = m
        self.session = session
        self.timeout = timeout
        self.stats = Stats()
        self.log = []  # (direction, peer, stage, round) in processing order
        self._transcripts = {}
        self._pending = collections.defaultdict(collections.deque)

    @property
    def peers(self):
        return [j for j in range(1, self.m + 1) if j != self.pid]

    def _note(self, direction, peer, frame):
        stage = frame[6]
        h = self._transcripts.get(stage)
        if h is None:
            h = self._transcripts[stage] = hashlib.sha256()
        h.update(direction + bytes([peer]) + frame)
        self.stats.stage_bytes[Stage(stage).name] += len(frame)
        self.log.append((direction.decode(), peer, Stage(stage).name, int.from_bytes(frame[7:9], "little")))

    def transcript_hashes(self):
        return {Stage(s).name: h.hexdigest() for s, h in sorted(self._transcripts.items())}

    def send(self, to, stage, rnd, payload: bytes):
        if to == self.pid or not 1 <= to <= self.m:
            raise ConfigError(f"bad destination party {to}")
        frame = encode_frame(self.session, stage, rnd, payload)
        self._note(b"S", to, frame)
        self.stats.sent[to] += len(frame)
        self.stats.frames_sent += 1
        self._push(to, frame)

    def broadcast(self, stage, rnd, payload: bytes, to=None):
        for j in (to if to is not None else self.peers):
            self.send(j, stage, rnd, payload)

    def recv(self, frm, stage, rnd) -> bytes:
        key = (frm, int(stage), rnd)
        pend = self._pending[key]
        deadline = time.monotonic() + self.timeout
        while not pend:
            frame = self._pull(frm, deadline)
            length, session, st, r = HEADER.unpack_from(frame)
            if session != self.session:
                raise TransportError(f"frame from session {session}, expected {self.session}")
            self._pending[(frm, st, r)].append(frame)
        frame = pend.popleft()
        self._note(b"R", frm, frame)
        self.stats.recv[frm] += len(frame)
        self.stats.frames_recv += 1
        return frame[HEADER.size:]

    def close(self):
        pass


# ------------------------------------------------------------------ in-process

class InProcessNetwork:
    """Full mesh of m endpoints connected by in-memory FIFO queues.

    All parties share one CPU here, so a wall-clock limit would mostly measure
    the other parties' work. By default (timeout=None) a recv fails only on a
    real deadlock: every still-running party blocked on an empty queue.
    """

    def __init__(self, m, session=1, timeout=None):
        self.m = m
        self.aborted = threading.Event()
        self.queues = {(i, j): queue.Queue() for i in range(1, m + 1) for j in range(1, m + 1) if i != j}
        self.endpoints = [LocalEndpoint(self, pid, m, session, timeout) for pid in range(1, m + 1)]
        self._lock = threading.Lock()
        self._waiting = {}
        self._live = set(range(1, m + 1))

    @property
    def channel_count(self):
        return len(self.queues) // 2

    def endpoint(self, pid):
        return self.endpoints[pid - 1]

    def abort(self):
        self.aborted.set()

    def party_done(self, pid):
        with self._lock:
            self._live.discard(pid)

    def _deadlocked(self):
        with self._lock:
            if set(self._waiting) != self._live:
                return False
            return all(q.empty() for q in self._waiting.values())


class LocalEndpoint(Endpoint):
    def __init__(self, net, pid, m, session, timeout):
        super().__init__(pid, m, session, timeout if timeout is not None else float("inf"))
        self.net = net

    def _push(self, to, frame):
        self.net.queues[(self.pid, to)].put(frame)

    def _pull(self, frm, deadline):
        q = self.net.queues[(frm, self.pid)]
        net = self.net
        strikes = 0
        with net._lock:
            net._waiting[self.pid] = q
        try:
            while True:
                if net.aborted.is_set():
                    raise TransportError("session aborted")
                try:
                    return q.get(timeout=_POLL)
                except queue.Empty:
                    if time.monotonic() > deadline:
                        raise TransportError(f"timeout waiting for party {frm}")
                    strikes = strikes + 1 if net._deadlocked() else 0
                    if strikes >= 3:
                        net.abort()
                        raise TransportError(f"deadlock: party {self.pid} waiting for party {frm}")
        finally:
            with net._lock:
                net._waiting.pop(self.pid, None)


# ------------------------------------------------------------------ TCP

def _recv_exact(sock, n):
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(min(n - len(buf), 1 << 20))
        if not chunk:
            raise TransportError("peer disconnected")
        buf += chunk
    return bytes(buf)


def _read_frame(sock):
    hdr = _recv_exact(sock, HEADER.size)
    length = HEADER.unpack(hdr)[0]
    if length > MAX_FRAME:
        raise TransportError(f"incoming frame of {length} bytes exceeds size cap")
    return hdr + _recv_exact(sock, length)


_HELLO = struct.Struct("<BB32s")


class TcpEndpoint(Endpoint):
    """TCP mesh member. `addrs` maps party id -> (host, port)."""

    def __init__(self, pid, m, session, addrs, config_digest: bytes = b"", timeout=DEFAULT_TIMEOUT):
        super().__init__(pid, m, session, timeout)
        self.addrs = addrs
        self.digest = hashlib.sha256(config_digest).digest()
        self.socks = {}
        self.inbox = {j: queue.Queue() for j in self.peers}
        self.send_locks = {j: threading.Lock() for j in self.peers}
        self._listener = None
        self._closed = False

    def _hello(self):
        return encode_frame(self.session, Stage.HELLO, 0, _HELLO.pack(self.pid, self.m, self.digest))

    def _check_hello(self, frame, expect_pid=None):
        length, session, stage, _ = HEADER.unpack_from(frame)
        if stage != Stage.HELLO or length != _HELLO.size:
            raise TransportError("handshake rejected: malformed hello")
        pid, m, digest = _HELLO.unpack_from(frame, HEADER.size)
        if session != self.session:
            raise TransportError("handshake rejected: session mismatch")
        if m != self.m:
            raise TransportError(f"handshake rejected: peer has m={m}, expected {self.m}")
        if digest != self.digest:
            raise TransportError("handshake rejected: configuration mismatch")
        if expect_pid is not None and pid != expect_pid:
            raise TransportError("handshake rejected: unexpected party id")
        if not 1 <= pid <= self.m or pid == self.pid:
            raise TransportError("handshake rejected: bad party id")
        return pid

    def connect(self):
        """Listen for higher-indexed parties, dial lower-indexed ones."""
        deadline = time.monotonic() + self.timeout
        higher = [j for j in self.peers if j > self.pid]
        if higher:
            host, port = self.addrs[self.pid]
            ls = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            ls.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            ls.bind((host, port))
            ls.listen(len(higher))
            self._listener = ls
        for j in sorted(j for j in self.peers if j < self.pid):
            sock = self._dial(self.addrs[j], deadline)
            sock.sendall(self._hello())
            sock.settimeout(max(0.1, deadline - time.monotonic()))
            try:
                self._check_hello(_read_frame(sock), expect_pid=j)
            except (OSError, TransportError) as e:
                sock.close()
                raise TransportError(f"handshake with party {j} failed: {e}")
            self._attach(j, sock)
        while len(self.socks) < len(self.peers):
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TransportError("timeout waiting for peers to connect")
            self._listener.settimeout(remaining)
            try:
                sock, _ = self._listener.accept()
            except socket.timeout:
                raise TransportError("timeout waiting for peers to connect")
            sock.settimeout(max(0.1, deadline - time.monotonic()))
            frame = _read_frame(sock)
            try:
                pid = self._check_hello(frame)
            except TransportError:
                # tell the peer before giving up ourselves
                sock.close()
                raise
            sock.sendall(self._hello())
            self._attach(pid, sock)
        return self

    def _dial(self, addr, deadline):
        while True:
            try:
                return socket.create_connection(addr, timeout=1.0)
            except OSError:
                if time.monotonic() > deadline:
                    raise TransportError(f"timeout connecting to {addr[0]}:{addr[1]}")
                time.sleep(0.05)

    def _attach(self, pid, sock):
        sock.settimeout(None)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.socks[pid] = sock
        t = threading.Thread(target=self._reader, args=(pid, sock), daemon=True)
        t.start()

    def _reader(self, pid, sock):
        q = self.inbox[pid]
        try:
            while True:
                q.put(_read_frame(sock))
        except (OSError, TransportError) as e:
            q.put(e if not self._closed else TransportError("closed"))

    def _push(self, to, frame):
        with self.send_locks[to]:
            try:
                self.socks[to].sendall(frame)
            except OSError as e:
                raise TransportError(f"send to party {to} failed: {e}")

    def _pull(self, frm, deadline):
        try:
            item = self.inbox[frm].get(timeout=max(0.0, deadline - time.monotonic()))
        except queue.Empty:
            raise TransportError(f"timeout waiting for party {frm}")
        if isinstance(item, Exception):
            raise TransportError(f"connection to party {frm} lost: {item}")
        return item

    def close(self):
        self._closed = True
        for s in self.socks.values():
            try:
                s.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            s.close()
        if self._listener is not None:
            self._listener.close()
