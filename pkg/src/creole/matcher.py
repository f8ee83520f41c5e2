"""Matching rule left-hand sides against a solution multiset."""
from __future__ import annotations

import datetime as _dt
import logging
from collections import Counter
from dataclasses import dataclass
from typing import Iterator

from .model import (
    NULL,
    Arith,
    Atom,
    Builtin,
    CreoleError,
    Fresh,
    PredRef,
    PredVar,
    Substitution,
    Var,
    atom_key,
    is_value,
    term_vars,
)

log = logging.getLogger(__name__)


class RuntimeFault(CreoleError):
    """A firing could not be completed; the configuration is left unchanged."""


@dataclass(frozen=True)
class MatchResult:
    subst: Substitution
    consumed: tuple  # ground atoms, lhs order


class FreshSupply:
    """Monotone per-VM counters; tokens are never reused within a run."""

    def __init__(self):
        self.counters: Counter = Counter()

    def fresh(self, vm: str) -> Fresh:
        n = self.counters[vm]
        self.counters[vm] += 1
        return Fresh(vm, n)


def parse_date(v) -> int:
    """Days since 0001-01-01 for a ``DD/MM/YYYY`` string; ints pass through."""
    if isinstance(v, int) and not isinstance(v, bool):
        return v
    if isinstance(v, str):
        day, month, year = v.split("/")
        return _dt.date(int(year), int(month), int(day)).toordinal()
    raise ValueError(f"not a date: {v!r}")


def eval_guard(a: Atom) -> bool:
    name = a.head.name
    args = a.vargs
    if name == "Null":
        return args[0] == NULL
    if name == "NotNull":
        return args[0] != NULL
    if name in ("Between", "NotBetween"):
        try:
            lo, x, hi = (parse_date(v) for v in args)
        except (ValueError, TypeError):
            log.warning("%s: arguments are not dates: %r", name, args)
            return False
        inside = lo <= x <= hi
        return inside if name == "Between" else not inside
    if name == "Eq":
        return args[0] == args[1]
    if name == "Neq":
        return args[0] != args[1]
    a0, a1 = args
    if not (isinstance(a0, int) and isinstance(a1, int)):
        return False
    return a0 < a1 if name == "Lt" else a0 <= a1


def _bind_term(t, v, vals: dict) -> bool:
    if isinstance(t, Var):
        if t.name in vals:
            return vals[t.name] == v and type(vals[t.name]) is type(v)
        vals[t.name] = v
        return True
    return t == v and type(t) is type(v)


def _unify(pat: Atom, g: Atom, vals: dict, preds: dict) -> list | None:
    """Extend bindings so that pat matches g; returns names added or None."""
    if len(pat.pargs) != len(g.pargs) or len(pat.vargs) != len(g.vargs):
        return None
    added_v, added_p = [], []

    def undo():
        for n in added_v:
            del vals[n]
        for n in added_p:
            del preds[n]

    heads = [(pat.head, g.head)] + list(zip(pat.pargs, g.pargs))
    for p, q in heads:
        if isinstance(p, PredVar):
            if p.name in preds:
                if preds[p.name] != q:
                    undo()
                    return None
            else:
                preds[p.name] = q
                added_p.append(p.name)
        elif p != q:
            undo()
            return None
    for t, v in zip(pat.vargs, g.vargs):
        fresh_var = isinstance(t, Var) and t.name not in vals
        if not _bind_term(t, v, vals):
            undo()
            return None
        if fresh_var:
            added_v.append(t.name)
    return added_v + added_p


def instantiate_term(t, vals: dict):
    if isinstance(t, Var):
        return vals[t.name]
    if isinstance(t, Arith):
        left = instantiate_term(t.left, vals)
        right = instantiate_term(t.right, vals)
        if not (isinstance(left, int) and isinstance(right, int)):
            raise RuntimeFault(f"arithmetic on non-integers: {left!r} {t.op} {right!r}")
        return left + right if t.op == "+" else left - right
    return t


def instantiate(a: Atom, vals: dict, preds: dict) -> Atom:
    def pred(p):
        return preds[p.name] if isinstance(p, PredVar) else p

    return Atom(
        pred(a.head),
        tuple(pred(p) for p in a.pargs),
        tuple(instantiate_term(t, vals) for t in a.vargs),
    )


def _guard_ready(g: Atom, vals: dict) -> bool:
    names: set = set()
    for t in g.vargs:
        term_vars(t, names)
    return names <= vals.keys()


def _index(solution) -> dict:
    """head -> list of [atom, multiplicity] with a stable order."""
    counts = Counter(solution)
    index: dict = {}
    for a in sorted(counts, key=atom_key):
        index.setdefault(a.head, []).append([a, counts[a]])
    return index


def enumerate_matches(lhs, solution) -> Iterator[MatchResult]:
    """Every way of matching ``lhs`` onto distinct solution occurrences.

    Results are unique up to (substitution, consumed multiset).
    """
    index = _index(solution)
    pats = [a for a in lhs if not isinstance(a.head, Builtin)]
    guards = [a for a in lhs if isinstance(a.head, Builtin)]
    all_entries = [e for es in index.values() for e in es]
    seen = set()
    vals: dict = {}
    preds: dict = {}
    chosen: list = []

    def guards_ok(pending):
        rest = []
        for g in pending:
            if _guard_ready(g, vals):
                if not eval_guard(instantiate(g, vals, preds)):
                    return None
            else:
                rest.append(g)
        return rest

    def go(k, pending):
        if k == len(pats):
            if pending:
                return
            subst = Substitution.of(vals, preds)
            consumed = tuple(chosen)
            key = (subst, tuple(sorted(consumed, key=atom_key)))
            if key not in seen:
                seen.add(key)
                yield MatchResult(subst, consumed)
            return
        pat = pats[k]
        if isinstance(pat.head, PredVar) and pat.head.name not in preds:
            entries = all_entries
        else:
            head = preds[pat.head.name] if isinstance(pat.head, PredVar) else pat.head
            entries = index.get(head, ())
        for entry in entries:
            if entry[1] == 0:
                continue
            added = _unify(pat, entry[0], vals, preds)
            if added is None:
                continue
            rest = guards_ok(pending)
            if rest is not None:
                entry[1] -= 1
                chosen.append(entry[0])
                yield from go(k + 1, rest)
                chosen.pop()
                entry[1] += 1
            for n in added:
                vals.pop(n, None)
                preds.pop(n, None)

    first = guards_ok(guards)
    if first is None:
        return
    yield from go(0, first)


def apply_subst(atoms, subst: Substitution, new_vars, fresh: FreshSupply, vm: str) -> tuple:
    """Ground the right-hand side; each new variable gets a never-used name."""
    vals = subst.value_map()
    for name in sorted(new_vars):
        vals[name] = fresh.fresh(vm)
    preds = subst.pred_map()
    out = tuple(instantiate(a, vals, preds) for a in atoms)
    for a in out:
        if not isinstance(a.head, PredRef) or not all(is_value(v) for v in a.vargs):
            raise RuntimeFault(f"right-hand side did not ground: {a}")
    return out
