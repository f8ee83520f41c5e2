"""Threaded execution: one worker per VM, atoms travel as JSON lines.

A transport moves serialized atoms between VM inboxes.  It counts atoms in
flight (sent but not yet deposited) so the coordinator can detect
quiescence: every worker idle, nothing in flight, and no activity between
two consecutive observations.
"""
from __future__ import annotations

import logging
import queue
import random
import socket
import sys
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .connectors import BuiltinState
from .engine import DEFAULT_MAX_STEPS, Dedup, Machine, Migrated, SeededRandom, normalize_atoms
from .matcher import FreshSupply
from .model import Configuration, CreoleError, sort_atoms
from .runtime import DistResult, DistributedConfig, System, serve
from .wire import dumps_atom, loads_atom

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger(__name__)


class TransportError(CreoleError):
    pass


def _dest(line: str) -> str:
    # the frame's "to" field without decoding the atom twice
    import json

    return json.loads(line)["to"]


class _Counted:
    def __init__(self):
        self._lock = threading.Lock()
        self.sent = 0
        self.delivered = 0

    def in_flight(self) -> int:
        with self._lock:
            return self.sent - self.delivered

    def _sent(self):
        with self._lock:
            self.sent += 1

    def ack(self):
        with self._lock:
            self.delivered += 1


class QueueTransport(_Counted):
    """Shared in-memory queues; with ``reorder_seed`` receivers pick a random pending atom."""

    def __init__(self, reorder_seed: int | None = None, delay: float = 0.0):
        super().__init__()
        self.reorder = None if reorder_seed is None else random.Random(reorder_seed)
        self.delay = delay
        self.inboxes: dict = {}
        self._cv = threading.Condition()

    def start(self, vms):
        self.inboxes = {vm: [] for vm in vms}

    def send(self, line: str):
        to = _dest(line)
        if to not in self.inboxes:
            raise TransportError(f"no VM {to} on this transport")
        self._sent()
        if self.delay:
            time.sleep(self.delay)
        with self._cv:
            self.inboxes[to].append(line)
            self._cv.notify_all()

    def receive(self, vm: str, timeout: float):
        with self._cv:
            box = self.inboxes[vm]
            if not box:
                self._cv.wait(timeout)
            if not box:
                return None
            i = self.reorder.randrange(len(box)) if self.reorder else 0
            return box.pop(i)

    def close(self):
        pass


class TcpTransport(_Counted):
    """One localhost listener per VM; frames are newline-delimited JSON."""

    def __init__(self, addresses: dict | None = None, host: str = "127.0.0.1"):
        super().__init__()
        self.addresses = dict(addresses or {})
        self.host = host
        self.queues: dict = {}
        self._servers: list = []
        self._conns: dict = {}
        self._locks: dict = {}
        self._closing = False
        self.error: Exception | None = None

    def start(self, vms):
        for vm in vms:
            host, port = self.addresses.get(vm, (self.host, 0))
            srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            try:
                srv.bind((host, port))
            except OSError as e:
                raise TransportError(f"cannot listen for {vm} on {host}:{port}: {e}") from None
            srv.listen()
            self.addresses[vm] = srv.getsockname()[:2]
            self.queues[vm] = queue.Queue()
            self._locks[vm] = threading.Lock()
            self._servers.append(srv)
            threading.Thread(target=self._accept, args=(srv, vm), daemon=True).start()

    def _accept(self, srv, vm):
        while not self._closing:
            try:
                conn, _ = srv.accept()
            except OSError:
                return
            threading.Thread(target=self._read, args=(conn, vm), daemon=True).start()

    def _read(self, conn, vm):
        with conn, conn.makefile("r", encoding="utf-8") as f:
            for line in f:
                line = line.rstrip("\n")
                if line:
                    self.queues[vm].put(line)

    def send(self, line: str):
        to = _dest(line)
        if to not in self.addresses:
            raise TransportError(f"no address for VM {to}")
        self._sent()
        with self._locks.setdefault(to, threading.Lock()):
            conn = self._conns.get(to)
            try:
                if conn is None:
                    conn = self._conns[to] = socket.create_connection(self.addresses[to], timeout=10)
                conn.sendall((line + "\n").encode("utf-8"))
            except OSError as e:
                self.error = TransportError(f"send to {to} failed: {e}")
                raise self.error from None

    def receive(self, vm: str, timeout: float):
        try:
            return self.queues[vm].get(timeout=timeout)
        except queue.Empty:
            return None

    def close(self):
        self._closing = True
        for c in self._conns.values():
            try:
                c.close()
            except OSError:
                pass
        for s in self._servers:
            try:
                s.close()
            except OSError:
                pass


def load_deployment(path) -> dict:
    """``{vm: (host, port)}`` from ``[vm.NAME] host=.. port=..`` tables."""
    data = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    return {
        name: (t.get("host", "127.0.0.1"), int(t.get("port", 0)))
        for name, t in data.get("vm", {}).items()
    }


# ---------------------------------------------------------------- workers

@dataclass
class _Shared:
    max_steps: int
    steps: int = 0
    stop: bool = False

    def __post_init__(self):
        self.lock = threading.Lock()

    def take_step(self) -> bool:
        with self.lock:
            if self.steps >= self.max_steps:
                return False
            self.steps += 1
            return True


class _Worker(threading.Thread):
    def __init__(self, system: System, vm: str, state, transport, shared: _Shared, seed: int):
        super().__init__(daemon=True, name=f"vm-{vm}")
        self.system = system
        self.vm = vm
        self.v = system.vms[vm]
        self.state = state
        self.t = transport
        self.shared = shared
        self.sched = SeededRandom(seed)
        self.machine = Machine(vm, FreshSupply(), local_only=True)
        self.trace: list = []
        self.idle = False
        self.activity = 0
        self.blocked = False  # budget hit while still able to progress
        self.error: Exception | None = None

    def deposit(self, line: str):
        a = loads_atom(line, self.system.kinds)
        self.system.owner(a)
        self.trace.append(Migrated(a, "in", self.vm))
        if self.v.is_builtin:
            self.state = BuiltinState(self.state.inbox + (a,), self.state.cursors)
        else:
            sol, removed = normalize_atoms(self.state.solution + (a,))
            if removed:
                self.trace.append(Dedup(removed, self.vm))
            self.state = Configuration(self.state.reaction, sol)

    def local(self) -> bool:
        if self.v.is_builtin:
            d = DistributedConfig(((self.vm, self.state),), ())
            s = self.state
            for i, req in enumerate(s.inbox):
                if self.v.connector.ready(s, self.v.roles[req.head.name], req):
                    break
            else:
                return False
            if not self.shared.take_step():
                self.blocked = True
                return False
            events: list = []
            nd = serve(self.system, d, self.vm, i, events)
            self.state = nd.state(self.vm)
            self.trace.extend(events)
            self._send(nd.ether)
            return True
        res = self.machine.step(self.state, self.sched)
        if res is None:
            return False
        if not self.shared.take_step():
            self.blocked = True
            return False
        conf, events = res
        self.trace.extend(events)
        foreign = tuple(a for a in conf.solution if a.head.vm != self.vm)
        if foreign:
            rest = list(conf.solution)
            for a in foreign:
                rest.remove(a)
            conf = Configuration(conf.reaction, sort_atoms(rest))
            for a in foreign:
                self.trace.append(Migrated(a, "out", self.vm))
        self.state = conf
        self._send(foreign)
        return True

    def _send(self, atoms):
        for a in atoms:
            self.t.send(dumps_atom(a))

    def run(self):
        try:
            while not self.shared.stop:
                line = self.t.receive(self.vm, 0)
                if line is not None:
                    self.idle = False
                    self.activity += 1
                    self.deposit(line)
                    self.t.ack()
                    continue
                if not self.blocked and self.local():
                    self.idle = False
                    self.activity += 1
                    continue
                self.idle = True
                line = self.t.receive(self.vm, 0.005)
                if line is not None:
                    self.idle = False
                    self.activity += 1
                    self.deposit(line)
                    self.t.ack()
        except Exception as e:  # surfaced by the coordinator
            self.error = e
            self.idle = True


def run_threaded(system: System, transport=None, seed: int = 0, max_steps: int = DEFAULT_MAX_STEPS,
                 timeout: float = 60.0) -> DistResult:
    """Run every VM on its own thread until quiescence or budget."""
    transport = transport or QueueTransport()
    d0 = system.initial()
    vms = sorted(system.vms)
    transport.start(vms)
    shared = _Shared(max_steps)
    workers = [
        _Worker(system, vm, d0.state(vm), transport, shared, seed * 1009 + i) for i, vm in enumerate(vms)
    ]
    for w in workers:
        w.start()
    deadline = time.monotonic() + timeout
    last = None
    try:
        while True:
            time.sleep(0.01)
            errs = [w.error for w in workers if w.error is not None]
            if errs:
                raise errs[0] if isinstance(errs[0], CreoleError) else TransportError(str(errs[0]))
            if getattr(transport, "error", None) is not None:
                raise transport.error
            snap = (tuple(w.activity for w in workers), transport.sent)
            quiet = all(w.idle for w in workers) and transport.in_flight() == 0
            if quiet and snap == last:
                break
            last = snap if quiet else None
            if time.monotonic() > deadline:
                raise TransportError(f"no quiescence within {timeout} s")
    finally:
        shared.stop = True
        for w in workers:
            w.join(1.0)
        transport.close()
    states = tuple((w.vm, w.state) for w in workers)
    trace = [e for w in workers for e in w.trace]
    status = "budgetExhausted" if any(w.blocked for w in workers) else "final"
    return DistResult(DistributedConfig(states, ()), trace, status, shared.steps)
