"""Concrete syntax for processes and scripts.

See ``docs/syntax.md`` for the grammar.  Name resolution happens while
parsing: an uppercase identifier resolves to a declaration of the enclosing
VM first, then to a public predicate of an enclosing ``let`` server, and is
otherwise a predicate variable.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .model import (
    BUILTINS,
    EMPTY,
    MREL,
    REL,
    Arith,
    Atom,
    Builtin,
    BuiltinDef,
    CreoleError,
    Let,
    Par,
    ParP,
    PredDecl,
    PredRef,
    PredVar,
    Repl,
    Rule,
    Seq,
    StaticError,
    Var,
    VmDef,
    components,
    format_rule,
    format_value,
    free_vars,
    make_par,
    term_vars,
)

KEYWORDS = {"vm", "pub", "priv", "let", "in", "par", "rel", "mrel", "new", "keep", "builtin", "as"}


class ParseError(CreoleError):
    pass


@dataclass(frozen=True)
class Token:
    kind: str  # ident, int, str, sym, kw, eof
    text: str
    line: int
    col: int
    end: int  # absolute offset just past the token
    start: int

    @property
    def span(self):
        return (self.line, self.col)


_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+|//[^\n]*)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<str>"(?:[^"\\\n]|\\.)*")
  | (?P<sym>->|[(){},;!&./+\-:=*])
    """,
    re.VERBOSE,
)


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos = 0
    line, line_start = 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", (line, pos - line_start + 1))
        kind = m.lastgroup
        chunk = m.group()
        if kind != "ws":
            if kind == "ident" and chunk in KEYWORDS:
                kind = "kw"
            tokens.append(Token(kind, chunk, line, pos - line_start + 1, m.end(), pos))
        nl = chunk.count("\n")
        if nl:
            line += nl
            line_start = pos + chunk.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1, pos, pos))
    return tokens


def _unquote(s: str) -> str:
    return re.sub(r"\\(.)", r"\1", s[1:-1])


class _Scope:
    def __init__(self, vm: str, own: dict, visible: dict):
        self.vm = vm
        self.own = own
        self.visible = visible

    def resolve(self, name: str):
        if name in self.own:
            return self.own[name]
        return self.visible.get(name)


class Parser:
    def __init__(self, text: str, origin: str = "<memory>"):
        self.origin = origin
        self.tokens = tokenize(text)
        self.i = 0
        self.decls: dict[PredRef, PredDecl] = {}

    # -- token plumbing
    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def error(self, msg: str, tok: Token | None = None):
        tok = tok or self.tok
        raise ParseError(msg, tok.span)

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind in ("sym", "kw")

    def take(self, text: str) -> Token:
        if not self.at(text):
            found = self.tok.text or "end of input"
            self.error(f"expected {text!r}, found {found!r}")
        t = self.tok
        self.i += 1
        return t

    def take_kind(self, kind: str, what: str) -> Token:
        if self.tok.kind != kind:
            found = self.tok.text or "end of input"
            self.error(f"expected {what}, found {found!r}")
        t = self.tok
        self.i += 1
        return t

    def vm_name(self) -> str:
        t = self.take_kind("ident", "VM name")
        name = t.text
        end = t.end
        while (
            self.tok.text == "-"
            and self.tok.start == end
            and self.peek().kind in ("ident", "int", "kw")
            and self.peek().start == self.tok.end
        ):
            self.i += 1
            name += "-" + self.tok.text
            end = self.tok.end
            self.i += 1
        return name

    # -- processes
    def process(self, visible: dict) -> tuple:
        t = self.tok
        if self.at("let"):
            self.i += 1
            server, exported = self.process(visible)
            self.take("in")
            client, client_exports = self.process({**visible, **exported})
            return Let(server, client), client_exports
        if self.at("par"):
            self.i += 1
            left, e1 = self.process(visible)
            right, e2 = self.process(visible)
            return ParP(left, right), {**e1, **e2}
        if self.at("("):
            self.i += 1
            p = self.process(visible)
            self.take(")")
            return p
        if self.at("vm"):
            return self.vmdef(visible)
        if self.at("builtin"):
            return self.builtin()
        self.error(f"expected a process, found {t.text or 'end of input'!r}")

    def decl(self, public: bool, roles: list | None = None) -> PredDecl:
        kind_tok = self.tok
        if not (self.at("rel") or self.at("mrel")):
            self.error("expected 'rel' or 'mrel'")
        self.i += 1
        name_tok = self.take_kind("ident", "predicate name")
        name = name_tok.text
        if not name[0].isupper():
            self.error("predicate names must start with an uppercase letter", name_tok)
        if name in BUILTINS:
            self.error(f"{name} is a built-in guard and cannot be declared", name_tok)
        self.take("/")
        p = int(self.take_kind("int", "predicate arity").text)
        self.take("/")
        v = int(self.take_kind("int", "value arity").text)
        if roles is not None:
            self.take("as")
            roles.append((name, self.take_kind("ident", "connector role").text))
        return PredDecl(name, REL if kind_tok.text == "rel" else MREL, p, v, public)

    def decl_list(self, public: bool, roles: list | None = None) -> list:
        self.take("(")
        out = []
        if not self.at(")"):
            out.append(self.decl(public, roles))
            while self.at(","):
                self.i += 1
                out.append(self.decl(public, roles))
        self.take(")")
        return out

    def _register(self, vm: str, decls: list, tok: Token) -> dict:
        own = {}
        for d in decls:
            if d.name in own:
                raise ParseError(f"predicate {d.name} declared twice in {vm}", tok.span)
            ref = PredRef(vm, d.name, d.kind)
            own[d.name] = ref
            self.decls[ref] = d
        return own

    def vmdef(self, visible: dict) -> tuple:
        start = self.take("vm")
        name = self.vm_name()
        decls = []
        if self.at("pub"):
            self.i += 1
            decls += self.decl_list(True)
        if self.at("priv"):
            self.i += 1
            decls += self.decl_list(False)
        own = self._register(name, decls, start)
        self.take("{")
        if self.at("}"):
            body = EMPTY
        else:
            body = self.script(_Scope(name, own, visible))
        self.take("}")
        exports = {d.name: own[d.name] for d in decls if d.public}
        return VmDef(name, tuple(decls), body, start.span), exports

    def builtin(self) -> tuple:
        start = self.take("builtin")
        name = self.vm_name()
        self.take(":")
        connector = self.take_kind("ident", "connector name").text
        source = None
        if self.tok.kind == "str":
            source = _unquote(self.tok.text)
            self.i += 1
        self.take("pub")
        roles: list = []
        decls = self.decl_list(True, roles)
        own = self._register(name, decls, start)
        node = BuiltinDef(name, connector, tuple(decls), tuple(roles), source, start.span)
        return node, dict(own)

    # -- scripts
    def script(self, scope: _Scope):
        items = [self.seq(scope)]
        while self.at(","):
            self.i += 1
            items.append(self.seq(scope))
        return make_par(items)

    def seq(self, scope: _Scope):
        left = self.unit(scope)
        if self.at(";"):
            self.i += 1
            return Seq(left, self.seq(scope))
        return left

    def unit(self, scope: _Scope):
        if self.at("!"):
            self.i += 1
            self.take("(")
            body = self.script(scope)
            self.take(")")
            return Repl(body)
        if self.at("("):
            self.i += 1
            s = self.script(scope)
            self.take(")")
            return s
        if self.tok.kind == "int" and self.tok.text == "0" and self.peek().text != "->":
            self.i += 1
            return EMPTY
        return self.rule(scope)

    def rule(self, scope: _Scope) -> Rule:
        start = self.tok
        lhs = self.molecule(scope, left=True)
        self.take("->")
        new = None
        if self.at("new"):
            self.i += 1
            names = []
            while self.tok.kind == "ident":
                names.append(self.tok.text)
                self.i += 1
            if not names:
                self.error("expected variable names after 'new'")
            self.take(".")
            new = tuple(names)
        rhs = self.molecule(scope, left=False)
        rule = Rule(tuple(lhs), tuple(rhs), new, start.span)
        try:
            check_rule(rule, self.decls)
        except StaticError as e:
            raise ParseError(e.message, start.span) from None
        return rule

    def molecule(self, scope: _Scope, left: bool) -> list:
        if self.tok.kind == "int" and self.tok.text == "0":
            self.i += 1
            return []
        atoms = [self.atom(scope, left)]
        while self.at("&"):
            self.i += 1
            atoms.append(self.atom(scope, left))
        return atoms

    def atom(self, scope: _Scope, left: bool) -> Atom:
        keep = False
        if self.at("keep"):
            if not left:
                self.error("'keep' is only allowed on the left-hand side")
            keep = True
            self.i += 1
        t = self.take_kind("ident", "predicate")
        if not t.text[0].isupper():
            self.error(f"lowercase identifier {t.text!r} in predicate position", t)
        if t.text in BUILTINS:
            if not left:
                self.error(f"built-in guard {t.text} cannot be produced", t)
            head = Builtin(t.text)
        else:
            head = scope.resolve(t.text) or PredVar(t.text)
        self.take("(")
        pargs, vargs = [], []
        if not self.at(")"):
            self.arg(scope, head, pargs, vargs)
            while self.at(","):
                self.i += 1
                self.arg(scope, head, pargs, vargs)
        self.take(")")
        return Atom(head, tuple(pargs), tuple(vargs), keep)

    def arg(self, scope, head, pargs, vargs):
        t = self.tok
        if t.kind == "ident" and t.text[0].isupper():
            if isinstance(head, Builtin):
                self.error("built-in guards take value arguments only", t)
            if vargs:
                self.error("predicate arguments must precede value arguments", t)
            self.i += 1
            pargs.append(scope.resolve(t.text) or PredVar(t.text))
            return
        vargs.append(self.term())

    def term(self):
        left = self.primary()
        while self.at("+") or self.at("-"):
            op = self.tok.text
            self.i += 1
            left = Arith(op, left, self.primary())
        return left

    def primary(self):
        t = self.tok
        if t.kind == "int":
            self.i += 1
            return int(t.text)
        if t.kind == "str":
            self.i += 1
            return _unquote(t.text)
        if t.kind == "ident":
            if t.text[0].isupper():
                self.error("predicate in value position", t)
            self.i += 1
            return Var(t.text)
        if self.at("-") and self.peek().kind == "int" and self.peek().start == t.end:
            self.i += 2
            return -int(self.tokens[self.i - 1].text)
        if self.at("("):
            self.i += 1
            inner = self.term()
            self.take(")")
            return inner
        self.error(f"expected a value, found {t.text or 'end of input'!r}")


def check_rule(rule: Rule, decls: dict) -> None:
    """Static well-formedness of one rule; raises StaticError."""
    for side, atoms in (("left", rule.lhs), ("right", rule.rhs)):
        for a in atoms:
            if isinstance(a.head, Builtin):
                if side == "right":
                    raise StaticError(f"built-in guard {a.head.name} on the right-hand side")
                want = BUILTINS[a.head.name]
                if a.pargs or len(a.vargs) != want:
                    raise StaticError(f"{a.head.name} expects {want} value arguments")
            elif isinstance(a.head, PredRef) and a.head in decls:
                d = decls[a.head]
                if len(a.pargs) != d.pred_arity or len(a.vargs) != d.val_arity:
                    raise StaticError(
                        f"arity mismatch for {d.name}: declared {d.pred_arity}/{d.val_arity}, "
                        f"used {len(a.pargs)}/{len(a.vargs)}"
                    )
            if side == "left":
                for t in a.vargs:
                    if isinstance(t, Arith):
                        raise StaticError("arithmetic is not allowed on the left-hand side")
    lvals, lpreds = free_vars(rule.lhs)
    rvals, rpreds = free_vars(rule.rhs)
    bound: set = set()
    for a in rule.lhs:
        if not a.is_builtin:
            for t in a.vargs:
                term_vars(t, bound)
    for a in rule.lhs:
        if a.is_builtin:
            loose: set = set()
            for t in a.vargs:
                term_vars(t, loose)
            if loose - bound:
                raise StaticError(
                    f"guard variable {sorted(loose - bound)[0]} not bound by a consumable atom"
                )
    unbound_preds = rpreds - lpreds
    if unbound_preds:
        raise StaticError(f"predicate variable {sorted(unbound_preds)[0]} is not bound on the left")
    new = rvals - lvals
    if rule.new is not None and set(rule.new) != new:
        extra = sorted(new - set(rule.new))
        if extra:
            raise StaticError(f"right-hand variable {extra[0]} is neither bound nor new")
        raise StaticError(f"new name {sorted(set(rule.new) - new)[0]} is bound or unused")


def parse_process(text: str, origin: str = "<memory>"):
    """The process in ``text``; None for a file holding only comments."""
    p = Parser(text, origin)
    if p.tok.kind == "eof":
        return None
    proc, _ = p.process({})
    if p.tok.kind != "eof":
        p.error(f"unexpected {p.tok.text!r} after process")
    return proc


def parse_file(path) -> object:
    path = Path(path)
    return parse_process(path.read_text(encoding="utf-8"), str(path))


def parse_script(text: str, vm: str = "main", decls=(), visible=None):
    """Parse a bare script for VM ``vm`` declaring ``decls``."""
    p = Parser(text)
    own = p._register(vm, list(decls), p.tok)
    scope = _Scope(vm, own, dict(visible or {}))
    s = EMPTY if p.tok.kind == "eof" else p.script(scope)
    if p.tok.kind != "eof":
        p.error(f"unexpected {p.tok.text!r} after script")
    return s


# ---------------------------------------------------------------- printing

def pretty_decl(d: PredDecl) -> str:
    return f"{d.kind} {d.name}/{d.pred_arity}/{d.val_arity}"


def pretty_script(s) -> str:
    if s is EMPTY:
        return "0"
    if isinstance(s, Rule):
        return format_rule(s)
    if isinstance(s, Par):
        return ", ".join(pretty_script(c) for c in s.items)
    if isinstance(s, Seq):
        left = pretty_script(s.left)
        if isinstance(s.left, (Par, Seq)):
            left = f"({left})"
        right = pretty_script(s.right)
        if isinstance(s.right, Par):
            right = f"({right})"
        return f"{left} ; {right}"
    if isinstance(s, Repl):
        return f"!({pretty_script(s.body)})"
    raise TypeError(f"not a script: {s!r}")


def _wrap(p) -> str:
    text = pretty_process(p)
    return f"({text})" if isinstance(p, (Let, ParP)) else text


def pretty_process(p) -> str:
    if isinstance(p, VmDef):
        pub = ", ".join(pretty_decl(d) for d in p.decls if d.public)
        priv = [pretty_decl(d) for d in p.decls if not d.public]
        head = f"vm {p.name} pub({pub})"
        if priv:
            head += f" priv({', '.join(priv)})"
        if p.body is EMPTY:
            return f"{head} {{ }}"
        items = ",\n".join("  " + pretty_script(c) for c in components(p.body))
        return f"{head} {{\n{items}\n}}"
    if isinstance(p, BuiltinDef):
        roles = dict(p.roles)
        decls = ", ".join(f"{pretty_decl(d)} as {roles[d.name]}" for d in p.decls)
        src = f" {format_value(p.source)}" if p.source is not None else ""
        return f"builtin {p.name} : {p.connector}{src} pub({decls})"
    if isinstance(p, Let):
        return f"let {_wrap(p.server)}\nin {_wrap(p.client)}"
    if isinstance(p, ParP):
        return f"par {_wrap(p.left)}\n{_wrap(p.right)}"
    if p is None:
        return ""
    raise TypeError(f"not a process: {p!r}")
