"""Abstract syntax, ground values and configurations.

Everything here is immutable.  Values are plain Python objects: ``int`` and
``str`` for data, :class:`Fresh` for generated names and :class:`PredRef` for
predicates passed as arguments.  The null value is the string ``"null"``.
"""
from __future__ import annotations

from functools import lru_cache

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Union

REL = "rel"
MREL = "mrel"
NULL = "null"

BUILTINS = {
    "Null": 1,
    "NotNull": 1,
    "Between": 3,
    "NotBetween": 3,
    "Lt": 2,
    "Leq": 2,
    "Eq": 2,
    "Neq": 2,
}


class CreoleError(Exception):
    """Base class for user-facing errors; carries an optional source span."""

    def __init__(self, message: str, span: tuple[int, int] | None = None):
        self.message = message
        self.span = span
        super().__init__(self.__str__())

    def __str__(self) -> str:
        if self.span is None:
            return self.message
        line, col = self.span
        return f"{line}:{col}: {self.message}"


class StaticError(CreoleError):
    pass


@dataclass(frozen=True)
class PredDecl:
    name: str
    kind: str = MREL
    pred_arity: int = 0
    val_arity: int = 0
    public: bool = True

    def __post_init__(self):
        if self.kind not in (REL, MREL):
            raise ValueError(f"bad predicate kind {self.kind!r}")
        if self.pred_arity < 0 or self.val_arity < 0:
            raise ValueError("negative arity")


@dataclass(frozen=True)
class PredRef:
    """A predicate declared by virtual machine ``vm``.

    Identity is ``(vm, name)``; the kind rides along so that ground atoms are
    self-describing for duplicate elimination.
    """

    vm: str
    name: str
    kind: str = field(default=MREL, compare=False)

    @property
    def is_relation(self) -> bool:
        return self.kind == REL


@dataclass(frozen=True)
class Fresh:
    vm: str
    n: int


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class PredVar:
    name: str


@dataclass(frozen=True)
class Builtin:
    name: str


@dataclass(frozen=True)
class Arith:
    op: str  # "+" or "-"
    left: "Term"
    right: "Term"


Value = Union[int, str, Fresh, PredRef]
Term = Union[int, str, Fresh, PredRef, Var, Arith]
Head = Union[PredRef, PredVar, Builtin]


@dataclass(frozen=True)
class Atom:
    head: Head
    pargs: tuple = ()
    vargs: tuple = ()
    keep: bool = False

    def __hash__(self) -> int:
        # atoms are hashed constantly by multiset code; cache it
        h = self.__dict__.get("_hash")
        if h is None:
            h = hash((self.head, self.pargs, self.vargs, self.keep))
            object.__setattr__(self, "_hash", h)
        return h

    @property
    def is_builtin(self) -> bool:
        return isinstance(self.head, Builtin)

    def is_ground(self) -> bool:
        if self.keep or not isinstance(self.head, PredRef):
            return False
        if any(not isinstance(p, PredRef) for p in self.pargs):
            return False
        return all(is_value(v) for v in self.vargs)

    def __str__(self) -> str:
        return format_atom(self)


@dataclass(frozen=True)
class Rule:
    lhs: tuple = ()
    rhs: tuple = ()
    new: tuple | None = None  # explicit `new x y.` list when written
    span: tuple | None = field(default=None, compare=False, repr=False)

    def __hash__(self) -> int:
        h = self.__dict__.get("_hash")
        if h is None:
            h = hash((self.lhs, self.rhs, self.new))
            object.__setattr__(self, "_hash", h)
        return h

    @property
    def new_vars(self) -> frozenset:
        nv = self.__dict__.get("_new_vars")
        if nv is None:
            nv = free_vars(self.rhs)[0] - free_vars(self.lhs)[0]
            object.__setattr__(self, "_new_vars", nv)
        return nv

    def __str__(self) -> str:
        return format_rule(self)


class _Empty:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self) -> str:
        return "EMPTY"

    def __reduce__(self):
        return (_Empty, ())


EMPTY = _Empty()


@dataclass(frozen=True)
class Par:
    items: tuple


@dataclass(frozen=True)
class Seq:
    left: "Script"
    right: "Script"


@dataclass(frozen=True)
class Repl:
    body: "Script"


Script = Union[_Empty, Rule, Par, Seq, Repl]


@dataclass(frozen=True)
class VmDef:
    name: str
    decls: tuple = ()
    body: Script = EMPTY
    span: tuple | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class BuiltinDef:
    """A natively implemented VM; ``roles`` maps each declared name to a handler."""

    name: str
    connector: str
    decls: tuple = ()
    roles: tuple = ()  # ((pred name, role), ...)
    source: str | None = None
    span: tuple | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Let:
    server: "Process"
    client: "Process"


@dataclass(frozen=True)
class ParP:
    left: "Process"
    right: "Process"


Process = Union[VmDef, BuiltinDef, Let, ParP]


@dataclass(frozen=True)
class Configuration:
    reaction: tuple = ()
    solution: tuple = ()


@dataclass(frozen=True)
class Substitution:
    values: tuple = ()  # sorted ((name, value), ...)
    preds: tuple = ()

    @classmethod
    def of(cls, values: dict, preds: dict) -> "Substitution":
        return cls(tuple(sorted(values.items())), tuple(sorted(preds.items())))

    def value_map(self) -> dict:
        return dict(self.values)

    def pred_map(self) -> dict:
        return dict(self.preds)


def is_value(v) -> bool:
    return (isinstance(v, (int, str, Fresh, PredRef))) and not isinstance(v, bool)


# ---------------------------------------------------------------- helpers

def make_par(items: Iterable) -> Script:
    """Build a parallel composition, flattening nested Par and dropping 0."""
    flat = []
    for item in items:
        if isinstance(item, Par):
            flat.extend(item.items)
        elif item is not EMPTY:
            flat.append(item)
    if not flat:
        return EMPTY
    if len(flat) == 1:
        return flat[0]
    return Par(tuple(flat))


def components(script: Script) -> tuple:
    if script is EMPTY:
        return ()
    if isinstance(script, Par):
        return script.items
    return (script,)


def term_vars(t, out: set) -> None:
    if isinstance(t, Var):
        out.add(t.name)
    elif isinstance(t, Arith):
        term_vars(t.left, out)
        term_vars(t.right, out)


def free_vars(atoms: Iterable[Atom]) -> tuple[frozenset, frozenset]:
    """Value and predicate variables occurring in a molecule."""
    vals: set = set()
    preds: set = set()
    for a in atoms:
        if isinstance(a.head, PredVar):
            preds.add(a.head.name)
        for p in a.pargs:
            if isinstance(p, PredVar):
                preds.add(p.name)
        for t in a.vargs:
            term_vars(t, vals)
    return frozenset(vals), frozenset(preds)


def desugar_keep(rule: Rule) -> Rule:
    """Move `keep` flags from the left-hand side into copies on the right.

    Guards are never consumed, so a kept guard only loses its flag.
    """
    if not any(a.keep for a in rule.lhs):
        return rule
    lhs = tuple(Atom(a.head, a.pargs, a.vargs) for a in rule.lhs)
    kept = tuple(
        Atom(a.head, a.pargs, a.vargs) for a in rule.lhs if a.keep and not a.is_builtin
    )
    return Rule(lhs, kept + rule.rhs, rule.new, rule.span)


def iter_rules(script: Script) -> Iterator[Rule]:
    if isinstance(script, Rule):
        yield script
    elif isinstance(script, Par):
        for s in script.items:
            yield from iter_rules(s)
    elif isinstance(script, Seq):
        yield from iter_rules(script.left)
        yield from iter_rules(script.right)
    elif isinstance(script, Repl):
        yield from iter_rules(script.body)


def map_rules(script: Script, fn) -> Script:
    if isinstance(script, Rule):
        return fn(script)
    if isinstance(script, Par):
        return Par(tuple(map_rules(s, fn) for s in script.items))
    if isinstance(script, Seq):
        return Seq(map_rules(script.left, fn), map_rules(script.right, fn))
    if isinstance(script, Repl):
        return Repl(map_rules(script.body, fn))
    return script


def vm_defs(p: Process) -> Iterator:
    if isinstance(p, (VmDef, BuiltinDef)):
        yield p
    elif isinstance(p, Let):
        yield from vm_defs(p.server)
        yield from vm_defs(p.client)
    elif isinstance(p, ParP):
        yield from vm_defs(p.left)
        yield from vm_defs(p.right)


# ---------------------------------------------------------------- ordering

def value_key(v) -> tuple:
    if isinstance(v, bool):
        raise TypeError("booleans are not CREOLE values")
    if isinstance(v, int):
        return (0, v)
    if isinstance(v, str):
        return (1, v)
    if isinstance(v, Fresh):
        return (2, v.vm, v.n)
    if isinstance(v, PredRef):
        return (3, v.vm, v.name)
    raise TypeError(f"not a value: {v!r}")


def term_key(t) -> tuple:
    if isinstance(t, Var):
        return (4, t.name)
    if isinstance(t, PredVar):
        return (5, t.name)
    if isinstance(t, Arith):
        return (6, t.op, term_key(t.left), term_key(t.right))
    if isinstance(t, Builtin):
        return (7, t.name)
    return value_key(t)


@lru_cache(maxsize=1 << 17)
def atom_key(a: Atom) -> tuple:
    return (
        term_key(a.head),
        tuple(term_key(p) for p in a.pargs),
        tuple(term_key(t) for t in a.vargs),
        a.keep,
    )


def sort_atoms(atoms: Iterable[Atom]) -> tuple:
    return tuple(sorted(atoms, key=atom_key))


def multiset(atoms: Iterable[Atom]) -> Counter:
    return Counter(atoms)


# ---------------------------------------------------------------- formatting

def format_value(v) -> str:
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, Fresh):
        return f"#{v.vm}.{v.n}"
    if isinstance(v, PredRef):
        return v.name
    return str(v)


def format_term(t, top: bool = True) -> str:
    if isinstance(t, (Var, PredVar, Builtin)):
        return t.name
    if isinstance(t, Arith):
        right = format_term(t.right, top=False)
        if isinstance(t.right, Arith):
            right = f"({right})"
        return f"{format_term(t.left, top=False)} {t.op} {right}"
    if isinstance(t, int) and t < 0 and not top:
        return f"({t})"
    return format_value(t)


def format_atom(a: Atom) -> str:
    args = [format_term(p) for p in a.pargs] + [format_term(t) for t in a.vargs]
    text = f"{format_term(a.head)}({', '.join(args)})"
    return "keep " + text if a.keep else text


def format_molecule(atoms: tuple) -> str:
    if not atoms:
        return "0"
    return " & ".join(format_atom(a) for a in atoms)


def format_rule(r: Rule) -> str:
    rhs = format_molecule(r.rhs)
    if r.new:
        rhs = "new " + " ".join(r.new) + ". " + rhs
    return f"{format_molecule(r.lhs)} -> {rhs}"
