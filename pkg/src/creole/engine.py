"""Single virtual machine: duplicate elimination, reaction, sequencing.

Positions address a script node inside the reaction part: the first element
indexes the top-level multiset, then ``int`` steps go into parallel
components, ``"L"`` into the left part of a sequence, ``"S"`` into its right
part (never active) and ``"R"`` into the body of a replication.
"""
from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator

from .canon import canonicalize
from .matcher import FreshSupply, MatchResult, apply_subst, enumerate_matches
from .model import (
    EMPTY,
    Atom,
    Configuration,
    CreoleError,
    Par,
    PredRef,
    PredVar,
    Repl,
    Rule,
    Seq,
    components,
    desugar_keep,
    format_rule,
    make_par,
    map_rules,
    sort_atoms,
)
from .wire import encode_atom, encode_value

DEFAULT_MAX_STEPS = 100_000


class BoundExceeded(CreoleError):
    pass


class LocalityViolation(CreoleError):
    pass


# ---------------------------------------------------------------- schedulers

@dataclass
class SeededRandom:
    seed: int = 0

    def __post_init__(self):
        self.rng = random.Random(self.seed)

    def order(self, items) -> list:
        items = list(items)
        self.rng.shuffle(items)
        return items

    def pick(self, n: int) -> int:
        return self.rng.randrange(n)


@dataclass
class Deterministic:
    """Always the first candidate in enumeration order."""

    def order(self, items) -> list:
        return list(items)

    def pick(self, n: int) -> int:
        return 0


@dataclass
class Exhaustive:
    max_depth: int = 64
    max_states: int = 10_000

    def order(self, items) -> list:
        return list(items)

    def pick(self, n: int) -> int:
        return 0


# ---------------------------------------------------------------- trace

@dataclass(frozen=True)
class Fired:
    position: tuple
    rule: str
    subst: dict
    consumed: tuple
    produced: tuple
    vm: str = "main"


@dataclass(frozen=True)
class Skipped:
    position: tuple
    vm: str = "main"


@dataclass(frozen=True)
class Dedup:
    removed: tuple
    vm: str = "main"


@dataclass(frozen=True)
class Migrated:
    atom: Atom
    direction: str  # "out" or "in"
    vm: str = "main"


@dataclass(frozen=True)
class Served:
    """A built-in VM answered ``request`` with ``produced``."""

    request: Atom
    produced: tuple
    vm: str = "main"


def event_to_json(ev) -> dict:
    if isinstance(ev, Fired):
        return {
            "event": "fired",
            "vm": ev.vm,
            "position": list(ev.position),
            "rule": ev.rule,
            "subst": {k: encode_value(v) for k, v in sorted(ev.subst.items())},
            "consumed": [encode_atom(a) for a in ev.consumed],
            "produced": [encode_atom(a) for a in ev.produced],
        }
    if isinstance(ev, Skipped):
        return {"event": "skipped", "vm": ev.vm, "position": list(ev.position)}
    if isinstance(ev, Dedup):
        return {"event": "dedup", "vm": ev.vm, "removed": [encode_atom(a) for a in ev.removed]}
    if isinstance(ev, Migrated):
        return {"event": "migrated", "vm": ev.vm, "direction": ev.direction, "atom": encode_atom(ev.atom)}
    if isinstance(ev, Served):
        return {
            "event": "served",
            "vm": ev.vm,
            "request": encode_atom(ev.request),
            "produced": [encode_atom(a) for a in ev.produced],
        }
    raise TypeError(f"unknown event {ev!r}")


def trace_lines(events) -> str:
    return "".join(
        json.dumps(event_to_json(e), separators=(",", ":"), sort_keys=True) + "\n" for e in events
    )


# ---------------------------------------------------------------- structure

def load(script, solution=(), desugar: bool = True) -> Configuration:
    """Initial configuration; `keep` sugar is expanded here."""
    if desugar:
        script = map_rules(script, desugar_keep)
    sol, _ = normalize_atoms(solution)
    return Configuration(components(script), sol)


def normalize_atoms(atoms) -> tuple:
    """Duplicate elimination: (sorted solution, removed atoms)."""
    counts = Counter(atoms)
    removed = []
    for a, n in counts.items():
        if n > 1 and isinstance(a.head, PredRef) and a.head.is_relation:
            removed.extend([a] * (n - 1))
            counts[a] = 1
    return sort_atoms(counts.elements()), sort_atoms(removed)


def normalize(c: Configuration) -> Configuration:
    sol, _ = normalize_atoms(c.solution)
    return Configuration(c.reaction, sol)


def node_at(reaction: tuple, path: tuple):
    node = reaction[path[0]]
    for step in path[1:]:
        if isinstance(node, Par):
            node = node.items[step]
        elif isinstance(node, Seq):
            node = node.left if step == "L" else node.right
        elif isinstance(node, Repl):
            node = node.body
        else:
            raise KeyError(path)
    return node


def _rewrite_node(node, rest: tuple, fn):
    if not rest:
        return fn(node)
    step = rest[0]
    if isinstance(node, Par):
        items = list(node.items)
        items[step] = _rewrite_node(items[step], rest[1:], fn)
        return make_par(items)
    if isinstance(node, Seq) and step == "L":
        return Seq(_rewrite_node(node.left, rest[1:], fn), node.right)
    if isinstance(node, Repl) and step == "R":
        # the unfolded copy is rewritten; the replication itself stays
        return make_par([node, _rewrite_node(node.body, rest[1:], fn)])
    raise KeyError(rest)


def rewrite(reaction: tuple, path: tuple, fn) -> tuple:
    i = path[0]
    new = _rewrite_node(reaction[i], path[1:], fn)
    return reaction[:i] + components(new) + reaction[i + 1:]


def _walk(node, path: tuple, active: bool) -> Iterator[tuple]:
    """(kind, path, node) for rules and sequences; ``active`` marks reachability."""
    if isinstance(node, Rule):
        yield ("rule", path, node, active)
    elif isinstance(node, Par):
        for i, child in enumerate(node.items):
            yield from _walk(child, path + (i,), active)
    elif isinstance(node, Seq):
        yield ("seq", path, node, active)
        yield from _walk(node.left, path + ("L",), active)
        yield from _walk(node.right, path + ("S",), False)
    elif isinstance(node, Repl):
        yield from _walk(node.body, path + ("R",), active)


def walk(reaction: tuple, active_only: bool = True) -> Iterator[tuple]:
    for i, item in enumerate(reaction):
        for site in _walk(item, (i,), True):
            if site[3] or not active_only:
                yield site


def active_positions(reaction: tuple) -> list:
    return [(path, node) for kind, path, node, _ in walk(reaction) if kind == "rule"]


@lru_cache(maxsize=4096)
def _rule_effects(rule: Rule) -> tuple:
    """(read flags per non-builtin lhs atom, consumed heads, read heads,
    produced heads, uses predicate variables as heads)."""
    pats = [a for a in rule.lhs if not a.is_builtin]
    pool = list(rule.rhs)
    flags = []
    for a in pats:
        plain = Atom(a.head, a.pargs, a.vargs)
        if plain in pool:
            pool.remove(plain)
            flags.append(True)
        else:
            flags.append(False)
    heads = [a.head for a in pats] + [a.head for a in rule.rhs]
    has_var = any(isinstance(h, PredVar) for h in heads)
    consumed = frozenset(a.head for a, f in zip(pats, flags) if not f)
    read = frozenset(a.head for a, f in zip(pats, flags) if f)
    produced = frozenset(a.head for a in pool)
    return tuple(flags), consumed, read, produced, has_var


@dataclass(frozen=True)
class Candidate:
    kind: str  # "fire" or "skip"
    path: tuple
    node: object
    match: MatchResult | None = None


@dataclass
class Result:
    config: Configuration
    trace: list
    status: str  # "final" or "budgetExhausted"
    steps: int


@dataclass
class Machine:
    """Executes configurations of one VM named ``vm``.

    With ``local_only`` set, every consumed atom must belong to ``vm``.
    """

    vm: str = "main"
    fresh: FreshSupply = field(default_factory=FreshSupply)
    local_only: bool = False

    def __post_init__(self):
        self._progress_memo: dict = {}
        self._solset = None

    # -- candidates
    def iter_candidates(self, c: Configuration) -> Iterator[Candidate]:
        for kind, path, node, _ in walk(c.reaction):
            if kind == "seq":
                yield Candidate("skip", path, node)
            else:
                for m in enumerate_matches(node.lhs, c.solution):
                    yield Candidate("fire", path, node, m)

    def candidates(self, c: Configuration) -> list:
        return list(self.iter_candidates(c))

    def skippable(self, c: Configuration, seq: Seq) -> bool:
        if seq.left is EMPTY:
            return True
        key = (id(seq.left), c.solution)
        hit = self._progress_memo.get(key)
        if hit is not None and hit[0] is seq.left:
            return not hit[1]
        if len(self._progress_memo) > 20_000:
            self._progress_memo.clear()
        busy = self.progresses(Configuration(components(seq.left), c.solution))
        self._progress_memo[key] = (seq.left, busy)
        return not busy

    def apply(self, c: Configuration, cand: Candidate) -> tuple:
        """Reduce without the progression test: (config, events)."""
        if cand.kind == "skip":
            if not self.skippable(c, cand.node):
                return None
            reaction = rewrite(c.reaction, cand.path, lambda s: s.right)
            return Configuration(reaction, c.solution), [Skipped(cand.path, self.vm)]
        rule = cand.node
        m = cand.match
        if self.local_only:
            for a in m.consumed:
                if a.head.vm != self.vm:
                    raise LocalityViolation(f"{self.vm} matched non-local atom {a}")
        produced = apply_subst(rule.rhs, m.subst, rule.new_vars, self.fresh, self.vm)
        counts = Counter(c.solution)
        counts.subtract(m.consumed)
        counts.update(produced)
        sol, removed = normalize_atoms(+counts)
        reaction = rewrite(c.reaction, cand.path, lambda s: EMPTY)
        subst = {**m.subst.value_map(), **m.subst.pred_map()}
        events = [Fired(cand.path, format_rule(rule), subst, m.consumed, produced, self.vm)]
        if removed:
            events.append(Dedup(removed, self.vm))
        return Configuration(reaction, sol), events

    def _unchanged(self, c: Configuration, cand: Candidate) -> bool:
        """Cheap test that a firing only re-produces relation atoms already present."""
        rule = cand.node
        produced = apply_subst(rule.rhs, cand.match.subst, (), self.fresh, self.vm)
        if not all(a.head.is_relation for a in produced):
            return False
        memo = self._solset
        if memo is None or memo[0] is not c.solution:
            memo = self._solset = (c.solution, set(c.solution))
        present = memo[1]
        if not all(a in present for a in produced):
            return False
        return all(a in produced for a in cand.match.consumed)

    def progression(self, c: Configuration, cand: Candidate, key=None):
        fast = cand.kind == "fire" and cand.path[-1] == "R" and not cand.node.new_vars
        if fast and self._unchanged(c, cand):
            return None
        res = self.apply(c, cand)
        if res is None:
            return None
        new, events = res
        if fast:
            moved = new.solution != c.solution
        else:
            moved = canonicalize(new) != (key if key is not None else canonicalize(c))
        return (new, events) if moved else None

    def progresses(self, c: Configuration) -> bool:
        key = None
        for cand in self.iter_candidates(c):
            if cand.kind == "fire" and not (cand.path[-1] == "R" and not cand.node.new_vars):
                key = key if key is not None else canonicalize(c)
            if self.progression(c, cand, key) is not None:
                return True
        return False

    def step(self, c: Configuration, sched):
        """One progression chosen by ``sched``; None when ``c`` is final."""
        key = None
        for cand in sched.order(self.candidates(c)):
            if key is None and not (cand.kind == "fire" and cand.path[-1] == "R" and not cand.node.new_vars):
                key = canonicalize(c)
            res = self.progression(c, cand, key)
            if res is not None:
                return res
        return None

    def run(self, c: Configuration, sched, max_steps: int = DEFAULT_MAX_STEPS, on_step=None) -> Result:
        trace: list = []
        steps = 0
        while steps < max_steps:
            res = self.step(c, sched)
            if res is None:
                return Result(c, trace, "final", steps)
            c, events = res
            trace.extend(events)
            steps += 1
            if on_step is not None:
                on_step(c)
        status = "final" if self.step(c, Deterministic()) is None else "budgetExhausted"
        return Result(c, trace, status, steps)

    # -- exhaustive exploration
    def successors(self, c: Configuration, reduce: bool = True) -> list:
        key = canonicalize(c)
        if reduce:
            analysis = None
            for cand in self.iter_candidates(c):
                if cand.kind != "fire" or cand.path[-1] != "R":
                    continue
                if analysis is None:
                    analysis = _Analysis(c)
                if not analysis.static_ok(cand):
                    continue
                res = self.progression(c, cand, key)
                if res is not None and analysis.no_conflict(cand):
                    return [res[0]]
        out = []
        for cand in self.iter_candidates(c):
            res = self.progression(c, cand, key)
            if res is not None:
                out.append(res[0])
        return out

    def exhaustive_finals(
        self, c: Configuration, max_depth: int = 64, max_states: int = 10_000, reduce: bool = True
    ) -> dict:
        """Canonical forms of every reachable final configuration."""
        start = canonicalize(c)
        seen = {start}
        frontier = [(start, c)]
        finals: dict = {}
        depth = 0
        while frontier:
            if depth > max_depth:
                raise BoundExceeded(f"state space deeper than {max_depth} progressions")
            nxt = []
            for k, conf in frontier:
                succs = self.successors(conf, reduce)
                if not succs:
                    finals[k] = conf
                    continue
                for s in succs:
                    sk = canonicalize(s)
                    if sk in seen:
                        continue
                    seen.add(sk)
                    if len(seen) > max_states:
                        raise BoundExceeded(f"more than {max_states} states")
                    nxt.append((sk, s))
            frontier = nxt
            depth += 1
        return finals


class _Analysis:
    """Static independence facts about one reaction part.

    A firing of a directly replicated rule is explored alone when no other
    rule that might run before it can read or write the atoms it consumes,
    consume what it reads or produces, or observe the absence of what it
    produces from inside the left part of a sequence.
    """

    def __init__(self, c: Configuration):
        self.c = c
        self.sites = list(walk(c.reaction, active_only=False))
        self.rule_sites = [
            (path, node, self._left_of(path)) for kind, path, node, _ in self.sites if kind == "rule"
        ]
        self._matches: dict = {}

    @staticmethod
    def _left_of(path: tuple) -> frozenset:
        return frozenset(path[:i] for i, step in enumerate(path) if step == "L")

    def static_ok(self, cand: Candidate) -> bool:
        rule = cand.node
        _, consumed, read, produced, has_var = _rule_effects(rule)
        if has_var:
            return False
        anc = self._left_of(cand.path)
        right_parts = [q + ("S",) for q in anc]
        others_touch = set()
        consumed_all = set(consumed)
        sensitive_reads = set()
        for path, node, left_of in self.rule_sites:
            if any(path[: len(r)] == r for r in right_parts):
                continue
            _, q_cons, q_read, q_prod, q_var = _rule_effects(node)
            if q_var:
                return False
            consumed_all |= q_cons
            if not (left_of <= anc):
                sensitive_reads |= q_read | q_cons
            if path != cand.path:
                others_touch |= q_cons | q_read | q_prod
        if consumed & others_touch:
            return False
        if read & consumed_all:
            return False
        if produced & (consumed_all | sensitive_reads):
            return False
        return True

    def no_conflict(self, cand: Candidate) -> bool:
        rule = cand.node
        flags = _rule_effects(rule)[0]
        mine = Counter(a for a, f in zip(cand.match.consumed, flags) if not f)
        if not mine:
            return True
        if rule not in self._matches:
            self._matches[rule] = list(enumerate_matches(rule.lhs, self.c.solution))
        available = Counter(self.c.solution)
        for m in self._matches[rule]:
            if m == cand.match:
                continue
            theirs = Counter(a for a, f in zip(m.consumed, flags) if not f)
            for a, n in theirs.items():
                if a in mine and mine[a] + n > available[a]:
                    return False
        return True


def replay(c: Configuration, events) -> Configuration:
    """Re-apply recorded firings and skips to an initial configuration."""
    for ev in events:
        if isinstance(ev, Fired):
            counts = Counter(c.solution)
            counts.subtract(ev.consumed)
            if any(n < 0 for n in counts.values()):
                raise ValueError(f"trace consumes missing atoms at {ev.position}")
            counts.update(ev.produced)
            sol, _ = normalize_atoms(+counts)
            c = Configuration(rewrite(c.reaction, ev.position, lambda s: EMPTY), sol)
        elif isinstance(ev, Skipped):
            c = Configuration(rewrite(c.reaction, ev.position, lambda s: s.right), c.solution)
    return c
