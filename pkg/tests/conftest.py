import random
import sys
from pathlib import Path

import pytest

from creole.model import MREL, REL, PredDecl
from creole.parser import parse_script

ROOT = Path(__file__).resolve().parents[1]
PROGRAMS = ROOT / "programs"
FIXTURES = ROOT / "fixtures"
DATA = Path(__file__).resolve().parent / "data"

# small vocabulary for generated programs
GEN_DECLS = (
    PredDecl("P", REL, 0, 1, True),
    PredDecl("Q", REL, 0, 1, True),
    PredDecl("M", MREL, 0, 1, True),
    PredDecl("F", REL, 0, 0, True),
)
_ARITY = {"P": 1, "Q": 1, "M": 1, "F": 0}


def script(text, vm="main", decls=GEN_DECLS):
    return parse_script(text, vm, decls)


class ProgramGen:
    """Random single-VM programs over GEN_DECLS, as text.

    ``keep_text`` uses the keep sugar; ``plain_text`` spells the same
    program with kept atoms written on both sides.
    """

    def __init__(self, rng: random.Random, arith=False, seqs=True, repl=True, keeps=True):
        self.rng = rng
        self.arith = arith
        self.seqs = seqs
        self.repl = repl
        self.keeps = keeps

    def term(self, bound):
        r = self.rng.random()
        if bound and r < 0.6:
            v = self.rng.choice(sorted(bound))
            if self.arith and self.rng.random() < 0.3:
                return f"{v} + 1"
            return v
        return str(self.rng.randrange(3))

    def atom(self, bound, left):
        name = self.rng.choice("PQMF")
        if _ARITY[name] == 0:
            return name, "()"
        if left:
            t = self.rng.choice(["x", "y", str(self.rng.randrange(3))])
            if t in ("x", "y"):
                bound.add(t)
            return name, f"({t})"
        return name, f"({self.term(bound)})"

    def rule(self):
        bound: set = set()
        lhs = []
        for _ in range(self.rng.randrange(0, 3)):
            name, args = self.atom(bound, True)
            keep = self.keeps and self.rng.random() < 0.35
            lhs.append((keep, name + args))
        guards = []
        if "x" in bound and self.rng.random() < 0.2:
            guards.append(self.rng.choice(["Neq(x, 0)", "Eq(x, 1)", "Lt(x, 2)"]))
        rhs = [self.atom(bound, False) for _ in range(self.rng.randrange(0, 3))]
        rhs = [n + a for n, a in rhs]
        keep_lhs = [("keep " if k else "") + a for k, a in lhs] + guards
        plain_lhs = [a for _, a in lhs] + guards
        plain_rhs = [a for k, a in lhs if k] + rhs
        mol = lambda xs: " & ".join(xs) if xs else "0"  # noqa: E731
        return (f"{mol(keep_lhs)} -> {mol(rhs)}", f"{mol(plain_lhs)} -> {mol(plain_rhs)}")

    def node(self, depth):
        r = self.rng.random()
        if depth <= 0 or r < 0.45:
            return self.rule()
        if self.repl and r < 0.65:
            k, p = self.node(depth - 1)
            return f"!({k})", f"!({p})"
        if self.seqs and r < 0.8:
            (k1, p1), (k2, p2) = self.node(depth - 1), self.node(depth - 1)
            return f"({k1}) ; ({k2})", f"({p1}) ; ({p2})"
        (k1, p1), (k2, p2) = self.node(depth - 1), self.node(depth - 1)
        return f"({k1}), ({k2})", f"({p1}), ({p2})"

    def program(self, n_items=3, depth=2):
        items = [self.node(depth) for _ in range(self.rng.randrange(1, n_items + 1))]
        seed = []
        for _ in range(self.rng.randrange(0, 4)):
            name = self.rng.choice("PQM")
            seed.append(f"{name}({self.rng.randrange(3)})")
        if seed:
            items.append((f"0 -> {' & '.join(seed)}",) * 2)
        return ", ".join(k for k, _ in items), ", ".join(p for _, p in items)


@pytest.fixture
def gen():
    return lambda seed, **kw: ProgramGen(random.Random(seed), **kw)


sys.path.insert(0, str(Path(__file__).resolve().parent))


# ---------------------------------------------------------------- acceptance report

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number n")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when not in ("setup", "call"):
        return
    n, title = mark.args
    ok = call.excinfo is None
    prev = _CRITERIA.get(n)
    duration = call.duration + (prev[2] if prev else 0.0)
    _CRITERIA[n] = (title, ok and (prev[1] if prev else True), duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, duration = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title} ({duration:.2f} s)")
