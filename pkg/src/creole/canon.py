"""Canonical forms deciding structural congruence of configurations.

Two configurations get the same form when they differ only by multiset
reordering, parallel flattening, neutral ``0`` components, unfired
replication unfoldings (``!s, s`` collapses to ``!s``, ``!s, !s`` to ``!s``)
and a renaming of fresh names.

Fresh names are renamed in order of first occurrence after sorting the atoms
with fresh names masked out.  This is exact whenever the masked atoms are
pairwise distinct, which covers every program in this repository; in the
remaining symmetric cases the form is still deterministic but may separate
two isomorphic solutions.
"""
from __future__ import annotations

from collections import Counter
from functools import lru_cache
from typing import Iterable

from .model import (
    EMPTY,
    Arith,
    Atom,
    Builtin,
    Configuration,
    Fresh,
    Par,
    PredRef,
    PredVar,
    Repl,
    Rule,
    Seq,
    Var,
    atom_key,
)

_ZERO = ("0",)


@lru_cache(maxsize=1 << 16)
def script_key(s) -> tuple:
    if s is EMPTY:
        return _ZERO
    if isinstance(s, Rule):
        return (
            "r",
            tuple(atom_key(a) for a in s.lhs),
            tuple(atom_key(a) for a in s.rhs),
        )
    if isinstance(s, Par):
        return reaction_key(s.items)
    if isinstance(s, Seq):
        return ("seq", script_key(s.left), script_key(s.right))
    if isinstance(s, Repl):
        return ("!", script_key(s.body))
    raise TypeError(f"not a script: {s!r}")


def _parts(key: tuple) -> list:
    if key == _ZERO:
        return []
    if key[0] == "par":
        return list(key[1])
    return [key]


def reaction_key(items: Iterable) -> tuple:
    bag: Counter = Counter()
    for item in items:
        for part in _parts(script_key(item)):
            bag[part] += 1
    changed = True
    while changed:
        changed = False
        for k in list(bag):
            if k[0] != "!" or bag[k] == 0:
                continue
            if bag[k] > 1:
                bag[k] = 1
                changed = True
            unfolded = Counter(_parts(k[1]))
            if not unfolded:
                continue
            while all(bag[p] >= n for p, n in unfolded.items()):
                bag.subtract(unfolded)
                changed = True
        bag = +bag
    keys = sorted(bag.elements())
    if not keys:
        return _ZERO
    if len(keys) == 1:
        return keys[0]
    return ("par", tuple(keys))


def _vkey(v, names: dict | None) -> tuple:
    if isinstance(v, Fresh):
        if names is None:
            return (2,)
        return (2, names[v])
    if isinstance(v, bool):
        raise TypeError("booleans are not values")
    if isinstance(v, int):
        return (0, v)
    if isinstance(v, str):
        return (1, v)
    if isinstance(v, PredRef):
        return (3, v.vm, v.name)
    if isinstance(v, (Var, PredVar, Arith, Builtin)):
        raise TypeError(f"non-ground term in solution: {v!r}")
    raise TypeError(f"not a value: {v!r}")


def _akey(tag, a: Atom, names: dict | None) -> tuple:
    return (
        tag,
        _vkey(a.head, names),
        tuple(_vkey(p, names) for p in a.pargs),
        tuple(_vkey(v, names) for v in a.vargs),
    )


def canonical_atoms(tagged: Iterable[tuple]) -> tuple:
    """Canonical sorted form of ``(tag, ground atom)`` pairs under fresh renaming."""
    tagged = list(tagged)
    if not any(isinstance(v, Fresh) for _, a in tagged for v in a.vargs):
        return tuple(sorted(_akey(t, a, None) for t, a in tagged))
    tagged.sort(key=lambda ta: _akey(ta[0], ta[1], None))
    names: dict = {}
    for _, a in tagged:
        for v in a.vargs:
            if isinstance(v, Fresh) and v not in names:
                names[v] = len(names)
    return tuple(sorted(_akey(t, a, names) for t, a in tagged))


def rename_map(atoms: Iterable[Atom]) -> dict:
    """The fresh-name renaming used by :func:`canonical_atoms` (for display)."""
    atoms = sorted(atoms, key=lambda a: _akey(0, a, None))
    names: dict = {}
    for a in atoms:
        for v in a.vargs:
            if isinstance(v, Fresh) and v not in names:
                names[v] = len(names)
    return names


@lru_cache(maxsize=1 << 14)
def canonicalize(c: Configuration) -> tuple:
    return (reaction_key(c.reaction), canonical_atoms((0, a) for a in c.solution))
