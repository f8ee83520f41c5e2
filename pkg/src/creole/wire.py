"""JSON encoding of ground atoms.

Frame shape::

    {"to": vm, "pred": name, "predArgs": [{"vm": .., "pred": ..}, ..],
     "valArgs": [{"t": "int"|"str"|"name"|"pref", ...}, ..]}

Fresh names travel as ``{"t": "name", "v": "VM#n"}``.  Predicate kinds are
not on the wire; the decoder looks them up in a ``(vm, name) -> kind`` map.
"""
from __future__ import annotations

import json

from .model import MREL, Atom, Fresh, PredRef


class WireError(ValueError):
    pass


def encode_value(v) -> dict:
    if isinstance(v, bool):
        raise WireError("booleans are not values")
    if isinstance(v, int):
        return {"t": "int", "v": v}
    if isinstance(v, str):
        return {"t": "str", "v": v}
    if isinstance(v, Fresh):
        return {"t": "name", "v": f"{v.vm}#{v.n}"}
    if isinstance(v, PredRef):
        return {"t": "pref", "vm": v.vm, "pred": v.name}
    raise WireError(f"cannot encode {v!r}")


def encode_atom(a: Atom) -> dict:
    if not a.is_ground():
        raise WireError(f"only ground atoms travel: {a}")
    return {
        "to": a.head.vm,
        "pred": a.head.name,
        "predArgs": [{"vm": p.vm, "pred": p.name} for p in a.pargs],
        "valArgs": [encode_value(v) for v in a.vargs],
    }


def _ref(vm: str, name: str, kinds: dict | None) -> PredRef:
    kind = (kinds or {}).get((vm, name), MREL)
    return PredRef(vm, name, kind)


def decode_value(d: dict, kinds: dict | None = None):
    t = d.get("t")
    if t == "int":
        if not isinstance(d["v"], int) or isinstance(d["v"], bool):
            raise WireError(f"bad int {d!r}")
        return d["v"]
    if t == "str":
        return str(d["v"])
    if t == "name":
        vm, _, n = d["v"].rpartition("#")
        return Fresh(vm, int(n))
    if t == "pref":
        return _ref(d["vm"], d["pred"], kinds)
    raise WireError(f"unknown value tag {t!r}")


def decode_atom(d: dict, kinds: dict | None = None) -> Atom:
    try:
        head = _ref(d["to"], d["pred"], kinds)
        pargs = tuple(_ref(p["vm"], p["pred"], kinds) for p in d["predArgs"])
        vargs = tuple(decode_value(v, kinds) for v in d["valArgs"])
    except (KeyError, TypeError) as e:
        raise WireError(f"malformed frame: {d!r}") from e
    return Atom(head, pargs, vargs)


def dumps_atom(a: Atom) -> str:
    return json.dumps(encode_atom(a), separators=(",", ":"), sort_keys=True)


def loads_atom(line: str, kinds: dict | None = None) -> Atom:
    return decode_atom(json.loads(line), kinds)
