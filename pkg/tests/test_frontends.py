import random

import pytest
from hypothesis import given, settings, strategies as st

from creole.engine import Machine, SeededRandom, load
from creole.frontends import (
    CompileError,
    Cond,
    Query,
    compile_sql,
    compile_yql,
    encode_relalg,
    load_mappings,
    make_adapter,
    make_facade,
    make_mediator,
    merge_attributes,
    parse_sql,
    parse_yql,
)
from creole.model import MREL, REL, Atom, PredRef, Repl, format_atom, iter_rules
from creole.runtime import check_process
from creole.scenarios import COUNTS_QUERY, counts_mapping, search_mapping

MAPPING_TOML = """
[table.PhotoCounts]
vm = "F-VM"
request = "CountsIn"
response = "CountsOut"
in = ["fromDate", "toDate"]
out = ["count"]
"""


def test_parse_shapes():
    q = parse_sql("SELECT COUNT(*) FROM R WHERE a = 1 AND d BETWEEN '01/01/2009' AND '31/12/2009';")
    assert q == Query((), "R", (Cond("a", "=", (1,)), Cond("d", "between", ("01/01/2009", "31/12/2009"))), True)
    q = parse_yql('SELECT count FROM PhotoCounts WHERE fromDate = "a" AND toDate = "b"')
    assert q.columns == ("count",) and not q.count
    assert parse_sql("select * from R").columns == ()


@pytest.mark.parametrize(
    "text, msg",
    [
        ("SELECT a FROM R GROUP BY a", "GROUP BY"),
        ("SELECT a FROM R ORDER BY a", "ORDER BY"),
        ("SELECT a FROM R, S", "multi-table"),
        ("SELECT a FROM R WHERE a = 1 OR a = 2", "OR"),
        ("SELECT a FROM R WHERE a < 1", "comparison"),
        ("SELECT SUM(a) FROM R", "aggregate SUM"),
        ("SELECT a FROM R JOIN S", "JOIN"),
        ("SELECT a FROM (SELECT a FROM R)", "nested SELECT"),
        ("SELECT a, COUNT(*) FROM R", "cannot be combined"),
        ("SELECT a FROM R WHERE", "expected a column"),
        ("SELECT a", "FROM"),
    ],
)
def test_sql_rejects(text, msg):
    with pytest.raises(CompileError, match=msg):
        parse_sql(text)


@pytest.mark.parametrize(
    "text, msg",
    [
        ("SELECT COUNT(*) FROM PhotoCounts", "aggregate COUNT"),
        ("SELECT count FROM PhotoCounts WHERE x BETWEEN 1 AND 2", "BETWEEN"),
        ("SELECT count FROM PhotoCounts LIMIT 3", "LIMIT"),
    ],
)
def test_yql_rejects(text, msg):
    with pytest.raises(CompileError, match=msg):
        parse_yql(text)


def test_yql_binding_errors():
    m = counts_mapping("F-VM")
    with pytest.raises(CompileError, match="not bound by WHERE"):
        compile_yql(parse_yql('SELECT count FROM PhotoCounts WHERE fromDate = "a"'), m)
    with pytest.raises(CompileError, match="not an output column"):
        compile_yql(parse_yql('SELECT other FROM PhotoCounts WHERE fromDate = "a" AND toDate = "b"'), m)
    with pytest.raises(CompileError, match="unknown table"):
        compile_yql(parse_yql("SELECT a FROM Nope"), m)


def test_load_mappings():
    m = load_mappings(MAPPING_TOML)
    assert m == counts_mapping("F-VM")
    with pytest.raises(CompileError, match="missing key"):
        load_mappings("[table.T]\nvm = 'X'\n")


def test_yql_counts_shape():
    c = compile_yql(parse_yql(COUNTS_QUERY.format("01/01/2009", "31/12/2009")), counts_mapping("F-VM"))
    init, cont = c.script.items
    req = init.rhs[0]
    assert req.head == PredRef("F-VM", "CountsIn", MREL)
    assert req.pargs == (PredRef("C-VM", "CountsOut", REL),)
    assert req.vargs[1:] == ("01/01/2009", "31/12/2009")
    assert [a.head.name for a in cont.rhs] == ["Result"]


def test_yql_stream_shape():
    q = parse_yql('SELECT id FROM PhotoSearch WHERE fromDate = "a" AND toDate = "b"')
    c = compile_yql(q, search_mapping("F-VM"))
    items = c.script.items
    assert isinstance(items[1], Repl)
    assert [a.head.name for a in items[2].lhs] == ["Null", "Result"]
    assert {d.name: d.public for d in c.decls} == {"Result": True, "Photo": False}


def relation(rng, n, arity, hi=8):
    return {tuple(rng.randint(0, hi) for _ in range(arity)) for _ in range(rng.randint(0, n))}


def atoms(name, rows, kind=REL):
    return [Atom(PredRef("main", name, kind), (), t) for t in rows]


def out_rel(conf, name="Out"):
    return {a.vargs for a in conf.solution if a.head.name == name}


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_sql_select_matches_python(seed):
    rng = random.Random(seed)
    rows = relation(rng, 8, 3, 4)
    v = rng.randint(0, 4)
    q = parse_sql(f"SELECT c, a FROM R WHERE b = {v}")
    c = compile_sql(q, {"R": ["a", "b", "c"]})
    finals = Machine().exhaustive_finals(load(c.script, atoms("R", rows, MREL)), max_depth=200)
    expect = {(r[2], r[0]) for r in rows if r[1] == v}
    assert [out_rel(f) for f in finals.values()] == [expect]


@pytest.mark.parametrize("preserve", [False, True])
def test_sql_count(preserve):
    rng = random.Random(5)
    rows = [(rng.randint(0, 3), rng.choice(["01/06/2009", "01/06/2010"])) for _ in range(9)]
    q = parse_sql("SELECT COUNT(*) FROM R WHERE a = 1 AND d BETWEEN '01/01/2009' AND '31/12/2009'")
    c = compile_sql(q, {"R": ["a", "d"]}, preserve=preserve)
    res = Machine().run(load(c.script, atoms("R", rows, MREL)), SeededRandom(0))
    expect = sum(1 for a, d in rows if a == 1 and d.endswith("2009"))
    assert out_rel(res.config, "Count") == {(expect,)}
    left = sorted(a.vargs for a in res.config.solution if a.head.name == "R")
    assert left == (sorted(rows) if preserve else sorted(r for r in rows if not (r[0] == 1 and r[1].endswith("2009"))))


def test_sql_schema_errors():
    with pytest.raises(CompileError, match="unknown relation"):
        compile_sql(parse_sql("SELECT a FROM S"), {"R": ["a"]})
    with pytest.raises(CompileError, match="unknown column"):
        compile_sql(parse_sql("SELECT z FROM R"), {"R": ["a"]})


def python_relalg(op, rels, conds=(), cols=()):
    r = rels[0]
    if op == "select":
        ops = {"=": lambda a, b: a == b, "!=": lambda a, b: a != b, "<": lambda a, b: a < b, "<=": lambda a, b: a <= b}
        return {t for t in r if all(ops[o](t[i], v) for i, o, v in conds)}
    if op == "project":
        return {tuple(t[i] for i in cols) for t in r}
    if op == "rename":
        return set(r)
    if op == "union":
        return r | rels[1]
    if op == "difference":
        return r - rels[1]
    return {a + b for a in r for b in rels[1]}


def relalg_instance(rng, op, n=16):
    ar = rng.randint(1, 3)
    kw = {}
    if op in ("union", "difference"):
        ins = {"R": ar, "S": ar}
    elif op == "product":
        ins = {"R": ar, "S": rng.randint(1, 2)}
    else:
        ins = {"R": ar}
    rels = [relation(rng, n, a) for a in ins.values()]
    if op in ("union", "difference") and rels[0] and rng.random() < 0.5:
        rels[1] |= set(rng.sample(sorted(rels[0]), k=min(3, len(rels[0]))))
    if op == "select":
        kw["conds"] = [(rng.randrange(ar), rng.choice(["=", "!=", "<", "<="]), rng.randint(0, 8))]
    if op == "project":
        kw["cols"] = sorted(rng.sample(range(ar), rng.randint(1, ar)))
    return ins, rels, kw


def run_relalg(op, ins, rels, kw):
    c = encode_relalg(op, ins, **kw)
    sol = [a for name, rows in zip(ins, rels) for a in atoms(name, rows)]
    return Machine().exhaustive_finals(load(c.script, sol), max_depth=2000, max_states=100_000)


@pytest.mark.parametrize("op", ["select", "project", "rename", "union", "difference", "product"])
def test_relalg_small(op):
    rng = random.Random(op)
    for _ in range(25):
        ins, rels, kw = relalg_instance(rng, op, n=6)
        finals = run_relalg(op, ins, rels, kw)
        assert [out_rel(f) for f in finals.values()] == [python_relalg(op, rels, **kw)]


def test_relalg_errors():
    with pytest.raises(CompileError):
        encode_relalg("union", {"R": 1, "S": 2})
    with pytest.raises(CompileError):
        encode_relalg("join", {"R": 1})
    with pytest.raises(CompileError):
        encode_relalg("select", {"R": 1}, conds=[(0, "~", 1)])


def test_adapter_shape():
    c = make_adapter("A-VM", "P-VM", 2)
    (outer,) = c.script.items if hasattr(c.script, "items") else (c.script,)
    assert isinstance(outer, Repl)
    rules = list(iter_rules(c.script))
    assert len(rules) == 4
    cloning = [a for r in rules for a in r.rhs if a.head.name == "PhotoCloning"]
    assert all(a.head.vm == "P-VM" for a in cloning)


def test_facade_and_merge():
    assert merge_attributes(("title", "album"), ("title", "owner", "set")) == ("title", "album", "owner", "set")
    assert merge_attributes(("title", "album"), ("title", "owner", "set"), "intersection") == ("title",)
    c = make_facade("I-VM", "P-VM", ("title", "album"), "F-VM", ("title", "owner", "set"))
    assert len(list(iter_rules(c.script))) == 5
    assert {d.name for d in c.decls} == {"PhotoCloning", "PPhoto", "FPhoto", "Response"}


def test_mediator():
    assert make_mediator("Photo", "R", 2) == "!(Photo(y1, y2) -> R(y1, y2))"


def test_compiled_text_is_checkable():
    from creole.parser import parse_process

    c = compile_sql(parse_sql("SELECT a FROM R WHERE b = 2"), {"R": ["a", "b"]})
    p = parse_process(c.text())
    assert check_process(p) == []
    assert format_atom(p.body.body.rhs[0]) == "Out(y1)"
