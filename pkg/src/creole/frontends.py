"""Compilers from mini-SQL and mini-YQL, relational-algebra encodings and
the adapter / facade / mediator templates.

Every generator writes CREOLE text and parses it back with
:func:`creole.parser.parse_script`, so the emitted script is exactly what a
user could have typed.  The dialects are documented in ``docs/dialects.md``.
"""
from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field

from .model import MREL, REL, CreoleError, PredDecl, PredRef, VmDef, format_value
from .parser import parse_script, pretty_decl, pretty_script

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


class CompileError(CreoleError):
    pass


# ---------------------------------------------------------------- queries

@dataclass(frozen=True)
class Cond:
    column: str
    op: str  # "=" or "between"
    values: tuple


@dataclass(frozen=True)
class Query:
    columns: tuple  # () means *
    table: str
    where: tuple = ()
    count: bool = False


_QTOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<int>-?\d+)
  | (?P<str>'(?:[^'\\]|\\.)*'|"(?:[^"\\]|\\.)*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_\-]*)
  | (?P<sym><=|>=|<>|!=|[*(),=<>;.])
    """,
    re.VERBOSE,
)

# words outside both dialects, reported by name
_UNSUPPORTED = {
    "GROUP": "GROUP BY", "ORDER": "ORDER BY", "HAVING": "HAVING", "JOIN": "JOIN",
    "UNION": "UNION", "LIMIT": "LIMIT", "OR": "OR", "NOT": "NOT", "DISTINCT": "DISTINCT",
    "INSERT": "INSERT", "UPDATE": "UPDATE", "DELETE": "DELETE", "LIKE": "LIKE", "IN": "IN",
    "OFFSET": "OFFSET", "AS": "AS", "ON": "ON",
}
_AGGREGATES = {"SUM", "AVG", "MIN", "MAX"}


def _qtokens(text: str) -> list:
    out, pos = [], 0
    while pos < len(text):
        m = _QTOKEN.match(text, pos)
        if m is None:
            raise CompileError(f"unexpected character {text[pos]!r}", (1, pos + 1))
        if m.lastgroup != "ws":
            out.append((m.lastgroup, m.group(), pos + 1))
        pos = m.end()
    out.append(("eof", "", pos + 1))
    return out


class _QueryParser:
    def __init__(self, text: str, dialect: str):
        self.toks = _qtokens(text)
        self.i = 0
        self.dialect = dialect

    @property
    def tok(self):
        return self.toks[self.i]

    def error(self, msg, tok=None):
        tok = tok or self.tok
        raise CompileError(msg, (1, tok[2]))

    def word(self, w: str) -> bool:
        k, t, _ = self.tok
        return k == "ident" and t.upper() == w

    def expect_word(self, w: str):
        if not self.word(w):
            self.check_unsupported()
            self.error(f"expected {w}, found {self.tok[1] or 'end of query'!r}")
        self.i += 1

    def expect_sym(self, s: str):
        if self.tok[1] != s:
            self.check_unsupported()
            self.error(f"expected {s!r}, found {self.tok[1] or 'end of query'!r}")
        self.i += 1

    def check_unsupported(self):
        k, t, _ = self.tok
        if k == "ident":
            up = t.upper()
            if up in _UNSUPPORTED:
                self.error(f"unsupported construct: {_UNSUPPORTED[up]}")
            call = self.toks[self.i + 1][1] == "("
            if call and (up in _AGGREGATES or (up == "COUNT" and self.dialect == "yql")):
                self.error(f"unsupported construct: aggregate {up}")
            if up == "SELECT":
                self.error("unsupported construct: nested SELECT")
        if t == "(" and self.toks[self.i + 1][1].upper() == "SELECT":
            self.error("unsupported construct: nested SELECT")
        if t in ("<", ">", "<=", ">=", "<>", "!="):
            self.error(f"unsupported construct: comparison {t}")

    def ident(self, what: str) -> str:
        k, t, _ = self.tok
        if k != "ident" or t.upper() in ("SELECT", "FROM", "WHERE", "AND", "BETWEEN"):
            self.check_unsupported()
            self.error(f"expected {what}, found {t or 'end of query'!r}")
        self.check_unsupported()
        self.i += 1
        return t

    def literal(self):
        k, t, _ = self.tok
        if k == "int":
            self.i += 1
            return int(t)
        if k == "str":
            self.i += 1
            return re.sub(r"\\(.)", r"\1", t[1:-1])
        self.error(f"expected a literal, found {t or 'end of query'!r}")

    def query(self) -> Query:
        self.expect_word("SELECT")
        count = False
        cols: list = []
        if self.word("COUNT") and self.toks[self.i + 1][1] == "(" and self.dialect == "sql":
            self.i += 1
            self.expect_sym("(")
            self.expect_sym("*")
            self.expect_sym(")")
            count = True
            if self.tok[1] == ",":
                self.error("COUNT(*) cannot be combined with other columns")
        elif self.tok[1] == "*":
            self.i += 1
        else:
            cols.append(self.ident("a column"))
            while self.tok[1] == ",":
                self.i += 1
                if self.word("COUNT") and self.toks[self.i + 1][1] == "(":
                    self.error("COUNT(*) cannot be combined with other columns")
                cols.append(self.ident("a column"))
        self.expect_word("FROM")
        table = self.ident("a table name")
        if self.tok[1] == ",":
            self.error("unsupported construct: multi-table FROM")
        where = []
        if self.word("WHERE"):
            self.i += 1
            where.append(self.cond())
            while self.word("AND"):
                self.i += 1
                where.append(self.cond())
        if self.tok[1] == ";":
            self.i += 1
        if self.tok[0] != "eof":
            self.check_unsupported()
            self.error(f"unexpected {self.tok[1]!r} after query")
        return Query(tuple(cols), table, tuple(where), count)

    def cond(self) -> Cond:
        col = self.ident("a column")
        if self.tok[1] == "=":
            self.i += 1
            return Cond(col, "=", (self.literal(),))
        if self.word("BETWEEN"):
            if self.dialect == "yql":
                self.error("unsupported construct: BETWEEN on a virtual table")
            self.i += 1
            lo = self.literal()
            self.expect_word("AND")
            return Cond(col, "between", (lo, self.literal()))
        self.check_unsupported()
        self.error(f"expected '=' or BETWEEN after {col}")


def parse_sql(text: str) -> Query:
    return _QueryParser(text, "sql").query()


def parse_yql(text: str) -> Query:
    return _QueryParser(text, "yql").query()


# ---------------------------------------------------------------- compiled output

@dataclass
class Compiled:
    """A script together with the declarations of the VM that runs it."""

    vm: str
    decls: tuple
    source: str  # script text
    visible: dict = field(default_factory=dict)

    @property
    def script(self):
        return parse_script(self.source, self.vm, self.decls, self.visible)

    def vmdef(self) -> VmDef:
        return VmDef(self.vm, tuple(self.decls), self.script)

    def text(self) -> str:
        pub = ", ".join(pretty_decl(d) for d in self.decls if d.public)
        priv = [pretty_decl(d) for d in self.decls if not d.public]
        head = f"vm {self.vm} pub({pub})"
        if priv:
            head += f" priv({', '.join(priv)})"
        return f"{head} {{\n  {pretty_script(self.script)}\n}}"


def _vars(prefix: str, n: int) -> list:
    return [f"{prefix}{i}" for i in range(1, n + 1)]


def _args(items) -> str:
    return ", ".join(str(x) for x in items)


# ---------------------------------------------------------------- YQL

@dataclass(frozen=True)
class TableMapping:
    name: str
    request: str
    response: str
    inputs: tuple
    outputs: tuple
    vm: str
    stream: bool = False
    connector: str = "flickr"

    def __post_init__(self):
        if set(self.inputs) & set(self.outputs):
            raise CompileError(f"table {self.name}: input and output columns overlap")


def load_mappings(text: str) -> dict:
    data = tomllib.loads(text)
    out = {}
    for name, t in data.get("table", {}).items():
        try:
            out[name] = TableMapping(
                name,
                t["request"],
                t["response"],
                tuple(t.get("in", ())),
                tuple(t.get("out", ())),
                t["vm"],
                bool(t.get("stream", False)),
                t.get("connector", "flickr"),
            )
        except KeyError as e:
            raise CompileError(f"table {name}: missing key {e.args[0]}") from None
    return out


def compile_yql(q: Query, mappings: dict, vm: str = "C-VM") -> Compiled:
    """Client script calling the operation behind a virtual table."""
    if q.table not in mappings:
        raise CompileError(f"unknown table {q.table}")
    m = mappings[q.table]
    bound = {}
    for c in q.where:
        if c.column not in m.inputs:
            raise CompileError(f"{c.column} is not an input column of {m.name}")
        bound[c.column] = c.values[0]
    missing = [c for c in m.inputs if c not in bound]
    if missing:
        raise CompileError(f"input column {missing[0]} of {m.name} is not bound by WHERE")
    cols = q.columns or m.outputs
    for c in cols:
        if c not in m.outputs:
            raise CompileError(f"{c} is not an output column of {m.name}")
    outs = _vars("o", len(m.outputs))
    picked = [outs[m.outputs.index(c)] for c in cols]
    lits = [format_value(bound[c]) for c in m.inputs]
    visible = {m.request: PredRef(m.vm, m.request, MREL)}
    if not m.stream:
        decls = (
            PredDecl("Result", REL, 0, len(cols), True),
            PredDecl(m.response, REL, 0, 1 + len(m.outputs), True),
            PredDecl("Session", REL, 0, 1, False),
        )
        src = (
            f"0 -> new x. {m.request}({_args([m.response, 'x'] + lits)}) & Session(x),\n"
            f"Session(x) & {m.response}({_args(['x'] + outs)}) -> Result({_args(picked)})"
        )
        return Compiled(vm, decls, src, visible)
    if not m.outputs:
        raise CompileError(f"streamed table {m.name} needs an identifier output column")
    visible[m.response] = PredRef(m.vm, m.response, MREL)
    decls = (
        PredDecl("Result", MREL, 0, 1 + len(m.outputs), True),
        PredDecl("Photo", MREL, 0, 1 + len(cols), False),
    )
    pat = _args(["x"] + outs)
    src = (
        f"0 -> new x. {m.request}({_args(lits + ['x'])}) & {m.response}(Result, x),\n"
        f"!(NotNull({outs[0]}) & Result({pat}) -> {m.response}(Result, x) & Photo({_args(['x'] + picked)})),\n"
        f"Null({outs[0]}) & Result({pat}) -> 0"
    )
    return Compiled(vm, decls, src, visible)


# ---------------------------------------------------------------- SQL

def count_script(rel: str, arity: int, guards=(), pattern=None, preserve: bool = False) -> str:
    ys = pattern or _vars("y", arity)
    body = " & ".join(["Count(n)", f"{{R}}({_args(ys)})"] + list(guards))
    if not preserve:
        return f"(0 -> Count(0)), !({body.format(R=rel)} -> Count(n + 1))"
    plain = _vars("y", arity)
    return (
        f"!({rel}({_args(plain)}) -> Scratch({_args(plain)}) & Saved({_args(plain)})) ; "
        f"((0 -> Count(0)), !({body.format(R='Scratch')} -> Count(n + 1))) ; "
        f"!(Saved({_args(plain)}) -> {rel}({_args(plain)}))"
    )


def compile_sql(q: Query, schema: dict, vm: str = "main", preserve: bool = False) -> Compiled:
    """``schema`` maps relation names to column lists."""
    if q.table not in schema:
        raise CompileError(f"unknown relation {q.table}")
    columns = list(schema[q.table])
    for c in q.columns + tuple(c.column for c in q.where):
        if c not in columns:
            raise CompileError(f"unknown column {c} of {q.table}")
    ys = _vars("y", len(columns))
    pattern = list(ys)
    guards = []
    for c in q.where:
        v = ys[columns.index(c.column)]
        if c.op == "=":
            guards.append(f"Eq({v}, {format_value(c.values[0])})")
        else:
            lo, hi = (format_value(x) for x in c.values)
            guards.append(f"Between({lo}, {v}, {hi})")
    rdecl = PredDecl(q.table, MREL, 0, len(columns), True)
    if q.count:
        decls = [rdecl, PredDecl("Count", REL, 0, 1, True)]
        if preserve:
            decls += [
                PredDecl("Scratch", MREL, 0, len(columns), False),
                PredDecl("Saved", MREL, 0, len(columns), False),
            ]
        src = count_script(q.table, len(columns), guards, pattern, preserve)
        return Compiled(vm, tuple(decls), src)
    cols = q.columns or tuple(columns)
    out = [ys[columns.index(c)] for c in cols]
    lhs = " & ".join([f"keep {q.table}({_args(pattern)})"] + guards)
    decls = (rdecl, PredDecl("Out", REL, 0, len(cols), True))
    return Compiled(vm, decls, f"!({lhs} -> Out({_args(out)}))")


# ---------------------------------------------------------------- relational algebra

_GUARD_OPS = {"=": "Eq", "!=": "Neq", "<": "Lt", "<=": "Leq"}


def encode_relalg(op: str, inputs: dict, vm: str = "main", out: str = "Out", **params) -> Compiled:
    """Script computing ``op`` over relations ``inputs`` (name -> arity) into ``out``.

    ``select`` takes ``conds`` [(column index, op, literal)], ``project`` takes
    ``cols`` [indices]; the binary operators take exactly two inputs in order.
    """
    names = list(inputs)
    decls = [PredDecl(n, REL, 0, a, True) for n, a in inputs.items()]

    def pat(n, prefix="x"):
        return _vars(prefix, inputs[n])

    if op in ("union", "difference", "product"):
        if len(names) != 2:
            raise CompileError(f"{op} takes two relations")
        r, s = names
        if op != "product" and inputs[r] != inputs[s]:
            raise CompileError(f"{op} needs relations of equal arity")
    if op == "select":
        (r,) = names
        xs = pat(r)
        guards = []
        for i, o, v in params.get("conds", ()):
            if o not in _GUARD_OPS:
                raise CompileError(f"unsupported comparison {o}")
            guards.append(f"{_GUARD_OPS[o]}({xs[i]}, {format_value(v)})")
        arity = inputs[r]
        src = f"!({' & '.join([f'keep {r}({_args(xs)})'] + guards)} -> {out}({_args(xs)}))"
    elif op == "project":
        (r,) = names
        xs = pat(r)
        cols = params["cols"]
        arity = len(cols)
        src = f"!(keep {r}({_args(xs)}) -> {out}({_args(xs[i] for i in cols)}))"
    elif op == "rename":
        (r,) = names
        xs = pat(r)
        arity = inputs[r]
        src = f"!(keep {r}({_args(xs)}) -> {out}({_args(xs)}))"
    elif op == "union":
        xs = pat(r)
        arity = inputs[r]
        src = f"!(keep {r}({_args(xs)}) -> {out}({_args(xs)})), !(keep {s}({_args(xs)}) -> {out}({_args(xs)}))"
    elif op == "product":
        xs, ys = pat(r, "x"), pat(s, "y")
        arity = len(xs) + len(ys)
        src = f"!(keep {r}({_args(xs)}) & keep {s}({_args(ys)}) -> {out}({_args(xs + ys)}))"
    elif op == "difference":
        xs = pat(r)
        arity = inputs[r]
        a = _args(xs)
        decls.append(PredDecl("Cand", REL, 0, arity, False))
        src = (
            f"!(keep {r}({a}) -> Cand({a})) ; "
            f"!(Cand({a}) & keep {s}({a}) -> 0) ; "
            f"!(keep Cand({a}) -> {out}({a}))"
        )
    else:
        raise CompileError(f"unknown operator {op}")
    decls.insert(len(names), PredDecl(out, REL, 0, arity, True))
    return Compiled(vm, tuple(decls), src)


def relalg_oracle(op: str, rels: list, **params) -> set:
    """Set-semantics reference for :func:`encode_relalg`."""
    if op == "select":
        import operator

        fns = {"=": operator.eq, "!=": operator.ne, "<": operator.lt, "<=": operator.le}
        return {t for t in rels[0] if all(fns[o](t[i], v) for i, o, v in params.get("conds", ()))}
    if op == "project":
        return {tuple(t[i] for i in params["cols"]) for t in rels[0]}
    if op == "rename":
        return set(rels[0])
    if op == "union":
        return set(rels[0]) | set(rels[1])
    if op == "difference":
        return set(rels[0]) - set(rels[1])
    if op == "product":
        return {a + b for a in rels[0] for b in rels[1]}
    raise ValueError(op)


# ---------------------------------------------------------------- templates

def make_adapter(vm: str, server: str, n_attrs: int, cloning: str = "PhotoCloning") -> Compiled:
    """Counting adapter answering ``CountsIn(K, x, from, to)`` by draining a cloning cursor."""
    attrs = _vars("a", n_attrs)
    photo = _args(["y", "id", "date"] + attrs)
    resp = "K, x, y, from, to"
    src = (
        f"!( CountsIn(K, x, from, to) -> new y. Response({resp}, 0) & {cloning}(Photo, y),\n"
        f"   !( NotNull(id) & Between(from, date, to) & Response({resp}, n) & Photo({photo})\n"
        f"        -> {cloning}(Photo, y) & Response({resp}, n + 1),\n"
        f"      NotNull(id) & NotBetween(from, date, to) & keep Response({resp}, n) & Photo({photo})\n"
        f"        -> {cloning}(Photo, y) ),\n"
        f"   Null(id) & Photo({photo}) & Response({resp}, n) -> K(x, n) )"
    )
    decls = (
        PredDecl("CountsIn", MREL, 1, 3, True),
        PredDecl("Photo", MREL, 0, 3 + n_attrs, True),
        PredDecl("Response", REL, 1, 5, False),
    )
    return Compiled(vm, decls, src, {cloning: PredRef(server, cloning, MREL)})


def merge_attributes(p_attrs, f_attrs, mode: str = "union") -> tuple:
    if mode == "union":
        return tuple(dict.fromkeys(tuple(p_attrs) + tuple(f_attrs)))
    if mode == "intersection":
        return tuple(a for a in p_attrs if a in f_attrs)
    raise ValueError(f"unknown merge mode {mode!r}")


def make_facade(vm: str, p_server: str, p_attrs, f_server: str, f_attrs, mode: str = "union") -> Compiled:
    """Intermediate VM streaming the photos of one store, then the other, in a common shape.

    The servers must export their cloning relations as ``PPhotoCloning`` and
    ``FPhotoCloning``; the facade itself exports ``PhotoCloning``.
    """
    common = merge_attributes(p_attrs, f_attrs, mode)
    ps, fs = _vars("p", len(p_attrs)), _vars("f", len(f_attrs))

    def project(attrs, names):
        return [names[attrs.index(a)] if a in attrs else '"null"' for a in common]

    pp = _args(["x", "id", "date"] + ps)
    fp = _args(["x", "id", "date"] + fs)
    p_out = _args(["x", "id", "date"] + project(list(p_attrs), ps))
    f_out = _args(["x", "id", "date"] + project(list(f_attrs), fs))
    src = (
        f"!( PhotoCloning(P, x) -> PPhotoCloning(PPhoto, x) & Response(P, x),\n"
        f"   !( NotNull(id) & PPhoto({pp}) & keep Response(P, x) -> P({p_out}),\n"
        f"      Null(id) & PPhoto({pp}) & keep Response(P, x) -> FPhotoCloning(FPhoto, x),\n"
        f"      NotNull(id) & FPhoto({fp}) & keep Response(P, x) -> P({f_out}) ),\n"
        f"   Null(id) & FPhoto({fp}) & Response(P, x) -> P({f_out}) )"
    )
    decls = (
        PredDecl("PhotoCloning", MREL, 1, 1, True),
        PredDecl("PPhoto", MREL, 0, 3 + len(p_attrs), True),
        PredDecl("FPhoto", MREL, 0, 3 + len(f_attrs), True),
        PredDecl("Response", REL, 1, 1, False),
    )
    visible = {
        "PPhotoCloning": PredRef(p_server, "PPhotoCloning", MREL),
        "FPhotoCloning": PredRef(f_server, "FPhotoCloning", MREL),
    }
    return Compiled(vm, decls, src, visible)


def make_mediator(src: str = "Photo", dst: str = "R", arity: int = 1) -> str:
    ys = _args(_vars("y", arity))
    return f"!({src}({ys}) -> {dst}({ys}))"
