"""``creole`` command line: run, check, compile, oracle, serve-fixture.

Exit codes: 0 final, 1 static or input error, 2 step budget exhausted,
3 oracle bounds exceeded.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .canon import rename_map
from .engine import DEFAULT_MAX_STEPS, BoundExceeded, SeededRandom, event_to_json
from .model import MREL, BuiltinDef, CreoleError, Let, PredDecl, format_atom, format_value
from .parser import parse_process, pretty_process

EXIT_OK, EXIT_STATIC, EXIT_BUDGET, EXIT_BOUND = 0, 1, 2, 3


def _read_program(path: str):
    text = Path(path).read_text(encoding="utf-8")
    return parse_process(text, path)


def _fail(msg: str, code: int = EXIT_STATIC) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def _dump(config) -> dict:
    out = {}
    for vm, sol in sorted(config.solutions().items()):
        out[vm] = sorted(format_atom(a) for a in sol)
    return out


def _report(result, json_mode: bool, pending: list) -> str:
    sols = _dump(result.config)
    ether = sorted(format_atom(a) for a in result.config.ether)
    if json_mode:
        return json.dumps(
            {"status": result.status, "steps": result.steps, "solutions": sols, "ether": ether,
             "pending": pending},
            sort_keys=True,
        ) + "\n"
    lines = [f"status: {result.status}", f"steps: {result.steps}"]
    for vm, atoms in sols.items():
        lines.append(f"vm {vm}:")
        lines.extend(f"  {a}" for a in atoms) if atoms else lines.append("  0")
    lines.append(f"ether: {len(ether)}")
    lines.extend(f"  {a}" for a in ether)
    for p in pending:
        lines.append(f"warning: unanswered request {p}")
    return "\n".join(lines) + "\n"


def _pending(config) -> list:
    out = []
    for vm, s in config.states:
        for a in getattr(s, "inbox", ()):
            out.append(format_atom(a))
    return sorted(out)


def cmd_run(args) -> int:
    from .runtime import elaborate, run_distributed

    try:
        proc = _read_program(args.file)
        system = elaborate(proc, base_dir=Path(args.file).parent)
    except (CreoleError, OSError) as e:
        return _fail(f"{args.file}:{e}" if isinstance(e, CreoleError) else str(e))
    t0 = time.perf_counter()
    try:
        if args.deploy:
            from .transport import TcpTransport, load_deployment, run_threaded

            result = run_threaded(system, TcpTransport(load_deployment(args.deploy)), args.seed, args.steps)
        else:
            result = run_distributed(system, SeededRandom(args.seed), args.steps)
    except CreoleError as e:
        return _fail(f"run failed: {e}")
    elapsed = time.perf_counter() - t0
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as f:
            for ev in result.trace:
                f.write(json.dumps(event_to_json(ev), separators=(",", ":"), sort_keys=True) + "\n")
    sys.stdout.write(_report(result, args.json, _pending(result.config)))
    print(f"elapsed: {elapsed:.3f}s", file=sys.stderr)
    return EXIT_OK if result.status == "final" else EXIT_BUDGET


def cmd_check(args) -> int:
    from .runtime import check_process

    try:
        proc = _read_program(args.file)
    except CreoleError as e:
        print(f"{args.file}:{e}")
        return EXIT_STATIC
    except OSError as e:
        return _fail(str(e))
    errors = check_process(proc)
    for e in errors:
        print(f"{args.file}:{e}")
    if not errors:
        print(f"{args.file}: ok")
    return EXIT_STATIC if errors else EXIT_OK


def _server_stub(m) -> BuiltinDef:
    if m.stream:
        decls = (PredDecl(m.request, MREL, 0, 3, True), PredDecl(m.response, MREL, 1, 1, True))
        roles = ((m.request, "search"), (m.response, "result"))
    else:
        decls = (PredDecl(m.request, MREL, 1, 1 + len(m.inputs), True),)
        roles = ((m.request, "counts"),)
    return BuiltinDef(m.vm, m.connector, decls, roles)


def cmd_compile(args) -> int:
    from .frontends import CompileError, compile_sql, compile_yql, load_mappings, parse_sql, parse_yql

    query = args.query
    if Path(query).is_file():
        query = Path(query).read_text(encoding="utf-8")
    try:
        if args.dialect == "yql":
            if not args.map:
                return _fail("--map is required for yql")
            mappings = load_mappings(Path(args.map).read_text(encoding="utf-8"))
            q = parse_yql(query)
            compiled = compile_yql(q, mappings, args.vm or "C-VM")
            proc = Let(_server_stub(mappings[q.table]), compiled.vmdef())
        else:
            schema = {}
            for item in args.schema or ():
                name, _, cols = item.partition("=")
                schema[name] = [c for c in cols.split(",") if c]
            q = parse_sql(query)
            compiled = compile_sql(q, schema, args.vm or "main", preserve=args.preserve)
            proc = compiled.vmdef()
    except CompileError as e:
        return _fail(f"query:{e}")
    except (OSError, ValueError) as e:
        return _fail(str(e))
    text = pretty_process(proc) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _final_lines(conf) -> list:
    atoms = [a for sol in conf.solutions().values() for a in sol]
    names = rename_map(atoms)

    def show(a):
        txt = format_atom(a)
        for f, n in sorted(names.items(), key=lambda kv: -len(format_value(kv[0]))):
            txt = txt.replace(format_value(f), f"#{n}")
        return txt

    out = []
    for vm, sol in sorted(conf.solutions().items()):
        out.append(f"  vm {vm}: " + (", ".join(sorted(show(a) for a in sol)) or "0"))
    return out


def cmd_oracle(args) -> int:
    from .runtime import dist_exhaustive_finals, elaborate

    try:
        system = elaborate(_read_program(args.file), base_dir=Path(args.file).parent)
    except (CreoleError, OSError) as e:
        return _fail(str(e))
    try:
        finals = dist_exhaustive_finals(system, max_depth=args.max_depth, max_states=args.max_states)
    except BoundExceeded as e:
        return _fail(f"bound exceeded: {e}", EXIT_BOUND)
    listing = sorted("\n".join(_final_lines(conf)) for conf in finals.values())
    if args.json:
        print(json.dumps({"finals": len(listing), "configurations": listing}, sort_keys=True))
    else:
        print(f"finals: {len(listing)}")
        for i, text in enumerate(listing, 1):
            print(f"final {i}:")
            print(text)
    return EXIT_OK


def cmd_serve_fixture(args) -> int:
    from .connectors import load_fixture, serve_fixture_http

    try:
        backend, meta = load_fixture(args.fixture)
        server = serve_fixture_http(backend, args.port, args.host, background=False)
    except OSError as e:
        return _fail(f"cannot serve: {e}")
    host, port = server.server_address[:2]
    print(f"serving {meta['service']} fixture on http://{host}:{port}/tables/{meta['table']}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="creole", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log warnings from connectors")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute a program")
    r.add_argument("file")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--steps", type=int, default=DEFAULT_MAX_STEPS)
    r.add_argument("--trace", help="write the trace as JSON lines")
    r.add_argument("--deploy", help="TOML deployment file; runs threaded over TCP")
    r.add_argument("--json", action="store_true")
    r.set_defaults(fn=cmd_run)

    c = sub.add_parser("check", help="report static errors")
    c.add_argument("file")
    c.set_defaults(fn=cmd_check)

    k = sub.add_parser("compile", help="compile a mini-SQL or mini-YQL query")
    k.add_argument("--from", dest="dialect", choices=("sql", "yql"), required=True)
    k.add_argument("query", help="query text or a file holding it")
    k.add_argument("--map", help="TOML table mapping (yql)")
    k.add_argument("--schema", action="append", help="NAME=col1,col2 (sql, repeatable)")
    k.add_argument("--vm", help="name of the generated VM")
    k.add_argument("--preserve", action="store_true", help="COUNT(*) restores the counted atoms")
    k.add_argument("-o", "--output")
    k.set_defaults(fn=cmd_compile)

    o = sub.add_parser("oracle", help="list every final configuration")
    o.add_argument("file")
    o.add_argument("--max-depth", type=int, default=64)
    o.add_argument("--max-states", type=int, default=10_000)
    o.add_argument("--json", action="store_true")
    o.set_defaults(fn=cmd_oracle)

    s = sub.add_parser("serve-fixture", help="serve a photo fixture over HTTP")
    s.add_argument("--fixture", required=True)
    s.add_argument("--port", type=int, default=8080)
    s.add_argument("--host", default="127.0.0.1")
    s.set_defaults(fn=cmd_serve_fixture)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR, format="%(levelname)s: %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
