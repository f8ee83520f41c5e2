"""The adaptation, integration and coordination processes.

Builders return process ASTs; :func:`creole.parser.pretty_process` turns
them into the ``.cre`` files under ``programs/``.
"""
from __future__ import annotations

from .connectors import SERVICES
from .frontends import (
    Compiled,
    TableMapping,
    compile_yql,
    count_script,
    make_adapter,
    make_facade,
    make_mediator,
    merge_attributes,
    parse_yql,
)
from .model import MREL, REL, BuiltinDef, Let, ParP, PredDecl, VmDef

YEAR_2009 = ("01/01/2009", "31/12/2009")

COUNTS_QUERY = 'SELECT count FROM PhotoCounts WHERE fromDate = "{0}" AND toDate = "{1}"'
SEARCH_QUERY = 'SELECT * FROM PhotoSearch WHERE fromDate = "{0}" AND toDate = "{1}"'


def photo_vm(name: str, service: str, source: str | None = None, cloning: str = "PhotoCloning") -> BuiltinDef:
    """Built-in VM over a photo store; only Flickr-like stores count natively."""
    decls = [PredDecl(cloning, MREL, 1, 1, True)]
    roles = [(cloning, "cloning")]
    decls += [PredDecl("PhotoSearch", MREL, 0, 3, True), PredDecl("SearchResult", MREL, 1, 1, True)]
    roles += [("PhotoSearch", "search"), ("SearchResult", "result")]
    if service == "flickr":
        decls.append(PredDecl("CountsIn", MREL, 1, 3, True))
        roles.append(("CountsIn", "counts"))
    return BuiltinDef(name, service, tuple(decls), tuple(roles), source)


def counts_mapping(vm: str) -> dict:
    return {"PhotoCounts": TableMapping("PhotoCounts", "CountsIn", "CountsOut", ("fromDate", "toDate"), ("count",), vm)}


def search_mapping(vm: str, service: str = "flickr") -> dict:
    outs = ("id", "date_taken") + SERVICES[service]
    return {
        "PhotoSearch": TableMapping(
            "PhotoSearch", "PhotoSearch", "SearchResult", ("fromDate", "toDate"), outs, vm, stream=True,
            connector=service,
        )
    }


def counts_client(server: str, dates=YEAR_2009, vm: str = "C-VM") -> Compiled:
    return compile_yql(parse_yql(COUNTS_QUERY.format(*dates)), counts_mapping(server), vm)


def adaptation(service: str = "picasa", source: str | None = None, dates=YEAR_2009):
    """``let (let P-VM in A-VM) in C-VM``, or ``let F-VM in C-VM`` for Flickr."""
    if service == "flickr":
        server = photo_vm("F-VM", "flickr", source)
        return Let(server, counts_client("F-VM", dates).vmdef())
    store = photo_vm("P-VM", service, source)
    adapter = make_adapter("A-VM", "P-VM", len(SERVICES[service])).vmdef()
    return Let(Let(store, adapter), counts_client("A-VM", dates).vmdef())


def integration(p_source: str | None = None, f_source: str | None = None, dates=YEAR_2009, mode: str = "union"):
    """Client over an adapter over a facade merging both stores."""
    p_attrs, f_attrs = SERVICES["picasa"], SERVICES["flickr"]
    stores = ParP(
        photo_vm("P-VM", "picasa", p_source, cloning="PPhotoCloning"),
        photo_vm("F-VM", "flickr", f_source, cloning="FPhotoCloning"),
    )
    facade = make_facade("I-VM", "P-VM", p_attrs, "F-VM", f_attrs, mode).vmdef()
    common = merge_attributes(p_attrs, f_attrs, mode)
    adapter = make_adapter("A-VM", "I-VM", len(common)).vmdef()
    return Let(Let(Let(stores, facade), adapter), counts_client("A-VM", dates).vmdef())


def coordination(source: str | None = None, dates=YEAR_2009, vm: str = "C-VM"):
    """Search script, counting script and mediator in parallel on one VM."""
    s = compile_yql(parse_yql(SEARCH_QUERY.format(*dates)), search_mapping("F-VM"), vm)
    width = 1 + 2 + len(SERVICES["flickr"])
    t = count_script("R", width)
    c = make_mediator("Photo", "R", width)
    decls = s.decls + (PredDecl("R", MREL, 0, width, False), PredDecl("Count", REL, 0, 1, True))
    client = Compiled(vm, decls, ",\n".join([s.source, t, c]), s.visible)
    return Let(photo_vm("F-VM", "flickr", source), client.vmdef())


def vm_of(p, name: str):
    """The VmDef or BuiltinDef called ``name`` inside process ``p``."""
    if isinstance(p, (VmDef, BuiltinDef)):
        return p if p.name == name else None
    if isinstance(p, Let):
        return vm_of(p.server, name) or vm_of(p.client, name)
    if isinstance(p, ParP):
        return vm_of(p.left, name) or vm_of(p.right, name)
    return None
