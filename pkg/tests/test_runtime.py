from collections import Counter

import pytest

from conftest import DATA, PROGRAMS
from creole.canon import canonicalize
from creole.engine import Fired, Migrated, SeededRandom, Served
from creole.model import MREL, Atom, PredRef, format_atom
from creole.parser import parse_file, parse_process
from creole.runtime import (
    ConfigurationError,
    check_process,
    deliver,
    dist_exhaustive_finals,
    elaborate,
    run_distributed,
    solution_canon,
)
from creole.scenarios import adaptation, coordination, integration
from creole.transport import QueueTransport, TcpTransport, load_deployment, run_threaded


def solved(p, seed=0, **kw):
    res = run_distributed(elaborate(p, **kw), SeededRandom(seed))
    assert res.status == "final"
    return {vm: sorted(format_atom(a) for a in sol) for vm, sol in res.config.solutions().items()}, res


def test_echo():
    sols, res = solved(parse_file(PROGRAMS / "echo.cre"))
    assert sols == {"C": ["Done()"], "S": []}
    assert res.config.ether == ()
    cont = [e for e in res.trace if isinstance(e, Fired) and e.vm == "C" and e.consumed]
    assert len(cont) == 1


def test_session_reply_is_correlated():
    sols, res = solved(parse_file(PROGRAMS / "session.cre"))
    (done,) = sols["C"]
    assert done == "Done(#C.0)"
    fired = [e for e in res.trace if isinstance(e, Fired) and e.vm == "C" and e.consumed]
    assert len(fired) == 1


def test_locality_violation_is_static():
    errors = check_process(parse_file(DATA / "bad_locality.cre"))
    assert any("locality violation: C consumes I, declared by S" in str(e) for e in errors)


def test_invisible_reference_is_rejected():
    p = parse_process("par vm A pub(rel X/0/0) { } vm B pub(rel Y/0/0) { 0 -> Y() }")
    assert check_process(p) == []
    with pytest.raises(Exception, match="not bound on the left"):
        parse_process("par vm A pub(rel X/0/0) { 0 -> Y() } vm B pub(rel Y/0/0) { }")


def test_duplicate_vm_names():
    p = parse_process("par vm A pub(rel X/0/0) { } vm A pub(rel Y/0/0) { }")
    assert check_process(p)


def test_privates_are_not_exported():
    text = "let vm S priv(rel Hidden/0/0) { } in vm C pub(rel K/0/0) { 0 -> Hidden() }"
    with pytest.raises(Exception):
        parse_process(text)


def test_empty_process():
    assert check_process(None) == []
    res = run_distributed(elaborate(None), SeededRandom(0))
    assert res.status == "final" and res.steps == 0


def test_ill_typed_ether_atom():
    system = elaborate(parse_file(PROGRAMS / "echo.cre"))
    d = system.initial()
    bogus = Atom(PredRef("S", "Nope", MREL), (), ())
    with pytest.raises(ConfigurationError):
        deliver(system, d, bogus, [])
    wrong = Atom(PredRef("S", "I", MREL), (), (1,))
    with pytest.raises(ConfigurationError):
        deliver(system, d, wrong, [])


def test_conservation():
    """Every atom leaving a VM arrives exactly once at its owner."""
    for p in (adaptation("picasa"), integration(), coordination()):
        res = run_distributed(elaborate(p), SeededRandom(3))
        out = Counter(e.atom for e in res.trace if isinstance(e, Migrated) and e.direction == "out")
        arrived = Counter(e.atom for e in res.trace if isinstance(e, Migrated) and e.direction == "in")
        assert out == arrived and res.config.ether == ()
        assert all(e.atom.head.vm == e.vm for e in res.trace if isinstance(e, Migrated) and e.direction == "in")


@pytest.mark.parametrize("seed", range(5))
def test_scenarios(seed):
    assert solved(adaptation("picasa"), seed)[0]["C-VM"] == ["Result(3)"]
    assert solved(adaptation("flickr"), seed)[0]["C-VM"] == ["Result(4)"]
    assert solved(integration(), seed)[0]["C-VM"] == ["Result(7)"]
    assert solved(coordination(), seed)[0]["C-VM"] == ["Count(4)"]


def test_integration_single_sentinel():
    for seed in range(5):
        res = run_distributed(elaborate(integration()), SeededRandom(seed))
        arrived = [e.atom for e in res.trace if isinstance(e, Migrated) and e.direction == "in" and e.vm == "A-VM"]
        arrived = [a for a in arrived if a.head.name == "Photo"]
        sentinels = [a for a in arrived if all(v == "null" for v in a.vargs[1:])]
        assert len(sentinels) == 1
        assert len(arrived) - len(sentinels) == 11  # 5 Picasa photos + 6 Flickr photos


def test_builtin_served_events():
    res = run_distributed(elaborate(adaptation("flickr")), SeededRandom(0))
    served = [e for e in res.trace if isinstance(e, Served)]
    assert len(served) == 1 and served[0].vm == "F-VM"


def test_rewiring_changes_only_the_server():
    a, b = adaptation("picasa"), adaptation("flickr")
    assert solved(a)[0]["C-VM"] != solved(b)[0]["C-VM"]
    assert a.client.body == b.client.body or a.client.name == b.client.name


@pytest.mark.parametrize("make", [lambda: adaptation("flickr"), lambda: adaptation("picasa"), coordination])
def test_distributed_oracle_single_final(make):
    finals = dist_exhaustive_finals(elaborate(make()), max_states=20_000)
    assert len(finals) == 1


def test_oracle_on_race():
    finals = dist_exhaustive_finals(elaborate(parse_file(PROGRAMS / "race.cre")))
    assert len(finals) == 2


@pytest.mark.parametrize("seed", range(3))
def test_threaded_matches_simulation(seed):
    for make in (lambda: adaptation("picasa"), integration, coordination):
        sim = solution_canon(run_distributed(elaborate(make()), SeededRandom(seed)).config)
        mem = run_threaded(elaborate(make()), QueueTransport(reorder_seed=seed), seed)
        tcp = run_threaded(elaborate(make()), TcpTransport(), seed)
        assert mem.status == tcp.status == "final"
        assert solution_canon(mem.config) == sim == solution_canon(tcp.config)


def test_threaded_echo_over_tcp():
    res = run_threaded(elaborate(parse_file(PROGRAMS / "echo.cre")), TcpTransport(), 0)
    assert [format_atom(a) for a in res.config.solutions()["C"]] == ["Done()"]


def test_threaded_budget():
    p = parse_process("vm main pub(rel N/0/1) { 0 -> N(0), !(N(x) -> N(x + 1)) }")
    res = run_threaded(elaborate(p), QueueTransport(), 0, max_steps=30)
    assert res.status == "budgetExhausted" and res.steps == 30


def test_deployment_file(tmp_path):
    f = tmp_path / "deploy.toml"
    f.write_text('[vm.S]\nport = 0\n[vm.C]\nhost = "127.0.0.1"\nport = 0\n')
    addrs = load_deployment(f)
    assert addrs == {"S": ("127.0.0.1", 0), "C": ("127.0.0.1", 0)}
    res = run_threaded(elaborate(parse_file(PROGRAMS / "echo.cre")), TcpTransport(addrs), 0)
    assert res.status == "final"


def test_single_vm_program_matches_engine():
    from creole.engine import Machine, load

    p = parse_file(PROGRAMS / "count.cre")
    system = elaborate(p)
    one = run_distributed(system, SeededRandom(2)).config.state("main")
    alone = Machine().run(load(p.body), SeededRandom(2)).config
    assert canonicalize(one) == canonicalize(alone)
