"""Processes as sets of named virtual machines exchanging atoms.

``elaborate`` turns a process into a :class:`System` (static facts: VMs,
declarations, visibility) after checking locality and scoping.  The dynamic
state is a :class:`DistributedConfig`: one state per VM plus the ether, the
multiset of atoms in flight.  Out is eager: an atom produced for another VM
goes to the ether in the same step that produced it.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

from .canon import canonical_atoms, reaction_key
from .connectors import ROLES, BuiltinState, PhotoConnector, make_connector
from .engine import (
    DEFAULT_MAX_STEPS,
    BoundExceeded,
    Deterministic,
    Dedup,
    Machine,
    Migrated,
    Served,
    load,
    normalize_atoms,
)
from .matcher import FreshSupply
from .model import (
    EMPTY,
    Atom,
    BuiltinDef,
    Configuration,
    CreoleError,
    Let,
    ParP,
    PredRef,
    StaticError,
    VmDef,
    iter_rules,
    sort_atoms,
)
from .parser import check_rule


class ConfigurationError(CreoleError):
    """An atom in flight has no public owner."""


class LocalityError(StaticError):
    pass


@dataclass
class VmInstance:
    id: str
    decls: dict  # name -> PredDecl
    visible: frozenset  # PredRefs this VM may produce
    script: object = EMPTY
    builtin: BuiltinDef | None = None
    connector: PhotoConnector | None = None

    @property
    def is_builtin(self) -> bool:
        return self.builtin is not None

    @property
    def roles(self) -> dict:
        return dict(self.builtin.roles) if self.builtin else {}

    def refs(self) -> frozenset:
        return frozenset(PredRef(self.id, d.name, d.kind) for d in self.decls.values())

    def public_refs(self) -> frozenset:
        return frozenset(PredRef(self.id, d.name, d.kind) for d in self.decls.values() if d.public)


@dataclass(frozen=True)
class DistributedConfig:
    states: tuple = ()  # sorted ((vm id, Configuration | BuiltinState), ...)
    ether: tuple = ()  # sorted atoms

    def state(self, vm: str):
        for k, s in self.states:
            if k == vm:
                return s
        raise KeyError(vm)

    def with_state(self, vm: str, s) -> "DistributedConfig":
        return replace(self, states=tuple((k, s if k == vm else old) for k, old in self.states))

    def solutions(self) -> dict:
        return {k: s.solution for k, s in self.states if isinstance(s, Configuration)}


# ---------------------------------------------------------------- elaboration

def _values_refs(a: Atom):
    for p in a.pargs:
        if isinstance(p, PredRef):
            yield p
    for v in a.vargs:
        if isinstance(v, PredRef):
            yield v


def _scope(p, visible: frozenset, out: list, errors: list) -> frozenset:
    """Collect (VmDef|BuiltinDef, visible) pairs; returns the exports of ``p``."""
    if p is None:
        return frozenset()
    if isinstance(p, VmDef):
        own = frozenset(PredRef(p.name, d.name, d.kind) for d in p.decls)
        out.append((p, visible | own))
        return frozenset(PredRef(p.name, d.name, d.kind) for d in p.decls if d.public)
    if isinstance(p, BuiltinDef):
        own = frozenset(PredRef(p.name, d.name, d.kind) for d in p.decls)
        out.append((p, own))
        return own
    if isinstance(p, Let):
        served = _scope(p.server, visible, out, errors)
        return _scope(p.client, visible | served, out, errors)
    if isinstance(p, ParP):
        return _scope(p.left, visible, out, errors) | _scope(p.right, visible, out, errors)
    raise TypeError(f"not a process: {p!r}")


def _check_builtin(b: BuiltinDef, errors: list) -> None:
    roles = dict(b.roles)
    seen_roles = Counter(roles.values())
    for d in b.decls:
        role = roles.get(d.name)
        if role not in ROLES:
            errors.append(StaticError(f"{b.name}: unknown connector role {role!r} for {d.name}", b.span))
            continue
        want = ROLES[role]
        if (d.pred_arity, d.val_arity) != want:
            errors.append(
                StaticError(
                    f"{b.name}: role {role} needs arity {want[0]}/{want[1]}, "
                    f"{d.name} declares {d.pred_arity}/{d.val_arity}",
                    b.span,
                )
            )
    for role, n in seen_roles.items():
        if n > 1:
            errors.append(StaticError(f"{b.name}: role {role} bound twice", b.span))


def _check_vm(v: VmDef, visible: frozenset, registry: dict, errors: list) -> None:
    names = Counter(d.name for d in v.decls)
    for n, k in names.items():
        if k > 1:
            errors.append(StaticError(f"predicate {n} declared twice in {v.name}", v.span))
    for rule in iter_rules(v.body):
        span = rule.span or v.span
        try:
            check_rule(rule, registry)
        except StaticError as e:
            errors.append(StaticError(e.message, e.span or span))
        for a in rule.lhs:
            if isinstance(a.head, PredRef) and a.head.vm != v.name:
                errors.append(
                    LocalityError(
                        f"locality violation: {v.name} consumes {a.head.name}, declared by {a.head.vm}",
                        span,
                    )
                )
        refs = [r for a in rule.lhs for r in _values_refs(a)]
        for a in rule.rhs:
            refs.extend(_values_refs(a))
            if isinstance(a.head, PredRef):
                refs.append(a.head)
        for r in dict.fromkeys(refs):
            if r not in registry:
                errors.append(StaticError(f"unresolved predicate {r.vm}.{r.name}", span))
            elif r not in visible:
                errors.append(StaticError(f"{r.name} of {r.vm} is not visible in {v.name}", span))


def check_process(p) -> list:
    """Every static error of ``p`` (empty when it elaborates)."""
    errors: list = []
    sites: list = []
    _scope(p, frozenset(), sites, errors)
    registry = {}
    counts = Counter(node.name for node, _ in sites)
    for name, n in sorted(counts.items()):
        if n > 1:
            errors.append(StaticError(f"virtual machine {name} defined {n} times"))
    for node, _ in sites:
        for d in node.decls:
            registry[PredRef(node.name, d.name, d.kind)] = d
    for node, visible in sites:
        if isinstance(node, BuiltinDef):
            _check_builtin(node, errors)
        else:
            _check_vm(node, visible, registry, errors)
    return errors


class System:
    """Static view of an elaborated process."""

    def __init__(self, vms: dict, solutions: dict | None = None):
        self.vms = vms
        self.kinds = {(v.id, d.name): d.kind for v in vms.values() for d in v.decls.values()}
        self.initial_solutions = dict(solutions or {})
        self.fresh = FreshSupply()
        self._machines: dict = {}

    def machine(self, vm: str) -> Machine:
        m = self._machines.get(vm)
        if m is None:
            m = self._machines[vm] = Machine(vm, self.fresh, local_only=True)
        return m

    def script_vms(self) -> list:
        return [k for k in sorted(self.vms) if not self.vms[k].is_builtin]

    def initial(self) -> DistributedConfig:
        states = []
        for k in sorted(self.vms):
            v = self.vms[k]
            if v.is_builtin:
                states.append((k, BuiltinState()))
            else:
                states.append((k, load(v.script, self.initial_solutions.get(k, ()))))
        return DistributedConfig(tuple(states), ())

    def owner(self, a: Atom) -> VmInstance:
        v = self.vms.get(a.head.vm)
        d = v.decls.get(a.head.name) if v else None
        if d is None or not d.public:
            raise ConfigurationError(f"atom {a} has no public owner")
        if len(a.pargs) != d.pred_arity or len(a.vargs) != d.val_arity:
            raise ConfigurationError(
                f"atom {a} does not fit {d.name}/{d.pred_arity}/{d.val_arity} of {v.id}"
            )
        return v


def elaborate(p, connectors: dict | None = None, base_dir=None, solutions: dict | None = None) -> System:
    """Check ``p`` and build its VMs; ``connectors`` overrides built-in backends by VM name."""
    errors = check_process(p)
    if errors:
        raise errors[0] if len(errors) == 1 else StaticError(
            "; ".join(str(e) for e in errors), errors[0].span
        )
    sites: list = []
    _scope(p, frozenset(), sites, [])
    vms = {}
    connectors = connectors or {}
    for node, visible in sites:
        decls = {d.name: d for d in node.decls}
        if isinstance(node, BuiltinDef):
            conn = connectors.get(node.name)
            if conn is None:
                source = node.source
                if source and not source.startswith(("http://", "https://")) and base_dir is not None:
                    source = str(Path(base_dir) / source)
                conn = make_connector(node.connector, source)
            vms[node.name] = VmInstance(node.name, decls, visible, builtin=node, connector=conn)
        else:
            vms[node.name] = VmInstance(node.name, decls, visible, script=node.body)
    return System(vms, solutions)


# ---------------------------------------------------------------- distributed steps

@dataclass
class DistResult:
    config: DistributedConfig
    trace: list
    status: str  # "final" or "budgetExhausted"
    steps: int


def _emit(system: System, d: DistributedConfig, vm: str, local_state, produced_foreign, events) -> DistributedConfig:
    d = d.with_state(vm, local_state)
    if produced_foreign:
        for a in produced_foreign:
            events.append(Migrated(a, "out", vm))
        d = replace(d, ether=sort_atoms(d.ether + tuple(produced_foreign)))
    return d


def _local_after(system: System, vm: str, conf: Configuration, events) -> tuple:
    """Eager Out: split ``conf`` into local state and atoms leaving ``vm``."""
    foreign = tuple(a for a in conf.solution if a.head.vm != vm)
    if not foreign:
        return conf, ()
    rest = Counter(conf.solution)
    rest.subtract(foreign)
    return Configuration(conf.reaction, sort_atoms(+rest)), foreign


def deliver(system: System, d: DistributedConfig, a: Atom, events) -> DistributedConfig:
    """The In rule for one ether atom."""
    owner = system.owner(a)
    ether = Counter(d.ether)
    ether[a] -= 1
    d = replace(d, ether=sort_atoms(+ether))
    events.append(Migrated(a, "in", owner.id))
    s = d.state(owner.id)
    if owner.is_builtin:
        return d.with_state(owner.id, replace(s, inbox=s.inbox + (a,)))
    sol, removed = normalize_atoms(s.solution + (a,))
    if removed:
        events.append(Dedup(removed, owner.id))
    return d.with_state(owner.id, Configuration(s.reaction, sol))


def serve(system: System, d: DistributedConfig, vm: str, index: int, events) -> DistributedConfig:
    """A built-in VM handles the ``index``-th request of its inbox."""
    v = system.vms[vm]
    s = d.state(vm)
    req = s.inbox[index]
    state = replace(s, inbox=s.inbox[:index] + s.inbox[index + 1:])
    state, produced = v.connector.handle(state, v.roles[req.head.name], req)
    events.append(Served(req, tuple(produced), vm))
    return _emit(system, d, vm, state, tuple(produced), events)


def servable(system: System, d: DistributedConfig, vm: str) -> list:
    """Inbox positions of the requests ``vm`` can answer now (first of each kind)."""
    v = system.vms[vm]
    s = d.state(vm)
    out, seen = [], set()
    for i, req in enumerate(s.inbox):
        if req not in seen and v.connector.ready(s, v.roles[req.head.name], req):
            seen.add(req)
            out.append(i)
    return out


def local_step(system: System, d: DistributedConfig, vm: str, sched, events):
    v = system.vms[vm]
    s = d.state(vm)
    if v.is_builtin:
        ready = servable(system, d, vm)
        if not ready:
            return None
        return serve(system, d, vm, ready[0], events)
    res = system.machine(vm).step(s, sched)
    if res is None:
        return None
    conf, evs = res
    events.extend(evs)
    conf, foreign = _local_after(system, vm, conf, events)
    return _emit(system, d, vm, conf, foreign, events)


def dist_step(system: System, d: DistributedConfig, sched):
    """One progression of the distributed configuration: (config, events) or None."""
    moves = [("in", a) for a in dict.fromkeys(d.ether)] + [("local", k) for k in sorted(system.vms)]
    for kind, arg in sched.order(moves):
        events: list = []
        if kind == "in":
            return deliver(system, d, arg, events), events
        nd = local_step(system, d, arg, sched, events)
        if nd is not None:
            return nd, events
    return None


def run_distributed(
    system: System, sched, max_steps: int = DEFAULT_MAX_STEPS, on_step=None, d: DistributedConfig | None = None
) -> DistResult:
    """Single-threaded simulation of every VM until quiescence or budget."""
    d = system.initial() if d is None else d
    trace: list = []
    steps = 0
    while steps < max_steps:
        res = dist_step(system, d, sched)
        if res is None:
            return DistResult(d, trace, "final", steps)
        d, events = res
        trace.extend(events)
        steps += 1
        if on_step is not None:
            on_step(d)
    status = "final" if dist_step(system, d, Deterministic()) is None else "budgetExhausted"
    return DistResult(d, trace, status, steps)


# ---------------------------------------------------------------- distributed oracle

def dist_canonical(d: DistributedConfig) -> tuple:
    tagged = [(("ether", ""), a) for a in d.ether]
    scripts = []
    for vm, s in d.states:
        if isinstance(s, Configuration):
            scripts.append((vm, reaction_key(s.reaction)))
            tagged.extend((("sol", vm), a) for a in s.solution)
        else:
            tagged.extend((("inbox", vm), a) for a in s.inbox)
            for (kind, key), cur in s.cursors:
                marker = Atom(
                    PredRef(vm, "$" + kind), (), (key, cur.position) + tuple(r[0] for r in cur.snapshot)
                )
                tagged.append((("cursor", vm), marker))
    return tuple(scripts), canonical_atoms(tagged)


def dist_successors(system: System, d: DistributedConfig) -> list:
    out = []
    for a in dict.fromkeys(d.ether):
        out.append(deliver(system, d, a, []))
    for vm in sorted(system.vms):
        v = system.vms[vm]
        s = d.state(vm)
        if v.is_builtin:
            for i in servable(system, d, vm):
                out.append(serve(system, d, vm, i, []))
            continue
        # partial-order reduction is unsound here: an In may race a consuming rule
        for conf in system.machine(vm).successors(s, reduce=False):
            conf, foreign = _local_after(system, vm, conf, [])
            out.append(_emit(system, d, vm, conf, foreign, []))
    return out


def dist_exhaustive_finals(system: System, d: DistributedConfig | None = None,
                           max_depth: int = 64, max_states: int = 10_000) -> dict:
    """Canonical forms of every quiescent configuration reachable from ``d``."""
    d = system.initial() if d is None else d
    start = dist_canonical(d)
    seen = {start}
    frontier = [(start, d)]
    finals: dict = {}
    depth = 0
    while frontier:
        if depth > max_depth:
            raise BoundExceeded(f"state space deeper than {max_depth} progressions")
        nxt = []
        for k, conf in frontier:
            succs = dist_successors(system, conf)
            if not succs:
                finals[k] = conf
                continue
            for s in succs:
                sk = dist_canonical(s)
                if sk in seen:
                    continue
                seen.add(sk)
                if len(seen) > max_states:
                    raise BoundExceeded(f"more than {max_states} states")
                nxt.append((sk, s))
        frontier = nxt
        depth += 1
    return finals


def solution_canon(d: DistributedConfig) -> dict:
    """Per-VM canonical final solutions, for cross-run comparison."""
    return {vm: canonical_atoms((0, a) for a in sol) for vm, sol in d.solutions().items()}
