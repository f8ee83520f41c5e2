"""Built-in virtual machines backed by CRUD photo stores.

A connector answers request atoms with reply atoms sent through the
predicate reference carried by the request.  Photos stream one per request;
after the last photo a sentinel whose fields are all ``"null"`` is sent,
and every later request for the same key gets the sentinel again.
"""
from __future__ import annotations

import json
import logging
import threading
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, replace
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .matcher import parse_date
from .model import NULL, Atom, PredRef, value_key

log = logging.getLogger(__name__)

VERBS = {"create": "PUT", "read": "GET", "update": "POST", "delete": "DELETE"}

# attribute lists beyond (id, date_taken) per service
SERVICES = {
    "flickr": ("title", "owner", "set"),
    "picasa": ("title", "album"),
}

ROLES = {
    # role: (pred arity, value arity)
    "cloning": (1, 1),
    "search": (0, 3),
    "result": (1, 1),
    "counts": (1, 3),
}

FIXTURE_DIR = Path(__file__).resolve().parents[2] / "fixtures"


class BackendError(Exception):
    status = 500


class NotFound(BackendError):
    status = 404


class Conflict(BackendError):
    status = 409


class BadRequest(BackendError):
    status = 400


def _in_range(record: dict, lo, hi) -> bool:
    try:
        d = parse_date(record.get("date_taken"))
    except (ValueError, TypeError):
        return False
    return lo <= d <= hi


def filter_records(records, query: dict | None) -> list:
    query = dict(query or {})
    lo = query.pop("from", None)
    hi = query.pop("to", None)
    try:
        lo = parse_date(lo) if lo is not None else None
        hi = parse_date(hi) if hi is not None else None
    except (ValueError, TypeError) as e:
        raise BadRequest(f"bad date in query: {e}") from None
    out = []
    for r in records:
        if any(str(r.get(k)) != str(v) for k, v in query.items()):
            continue
        if lo is not None or hi is not None:
            if not _in_range(r, lo if lo is not None else -(10**9), hi if hi is not None else 10**9):
                continue
        out.append(dict(r))
    return sorted(out, key=lambda r: str(r["id"]))


class MemoryBackend:
    """In-process CRUD store: ``{table: {id: record}}``."""

    def __init__(self, tables: dict | None = None):
        self.tables = {t: {str(r["id"]): dict(r) for r in rows} for t, rows in (tables or {}).items()}
        self.lock = threading.Lock()

    def _table(self, table: str) -> dict:
        return self.tables.setdefault(table, {})

    def create(self, table: str, record: dict) -> None:
        rid = str(record.get("id", ""))
        if not rid or rid == NULL:
            raise BadRequest("record needs a non-null id")
        with self.lock:
            rows = self._table(table)
            if rid in rows:
                raise Conflict(f"{table}/{rid} exists")
            rows[rid] = dict(record, id=rid)

    def read(self, table: str, query: dict | None = None) -> list:
        with self.lock:
            rows = list(self._table(table).values())
        return filter_records(rows, query)

    def get(self, table: str, rid: str) -> dict:
        with self.lock:
            row = self._table(table).get(str(rid))
        if row is None:
            raise NotFound(f"{table}/{rid}")
        return dict(row)

    def update(self, table: str, rid: str, record: dict) -> None:
        rid = str(rid)
        with self.lock:
            rows = self._table(table)
            if rid not in rows:
                raise NotFound(f"{table}/{rid}")
            rows[rid] = dict(record, id=rid)

    def delete(self, table: str, rid: str) -> None:
        with self.lock:
            rows = self._table(table)
            if str(rid) not in rows:
                raise NotFound(f"{table}/{rid}")
            del rows[str(rid)]


def load_fixture(path) -> tuple:
    """(MemoryBackend, metadata) from a fixture JSON file."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    table = data.get("table", "photos")
    meta = {"service": data["service"], "table": table, "attributes": tuple(data["attributes"])}
    return MemoryBackend({table: data["photos"]}), meta


def fixture_path(name: str) -> Path:
    return FIXTURE_DIR / f"{name}.json"


# ---------------------------------------------------------------- HTTP

def _make_handler(backend):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):
            log.debug("http: " + fmt, *args)

        def _route(self):
            url = urllib.parse.urlsplit(self.path)
            parts = [urllib.parse.unquote(p) for p in url.path.split("/") if p]
            if len(parts) not in (2, 3) or parts[0] != "tables":
                raise NotFound(url.path)
            query = dict(urllib.parse.parse_qsl(url.query))
            return parts[1], (parts[2] if len(parts) == 3 else None), query

        def _body(self):
            n = int(self.headers.get("Content-Length") or 0)
            try:
                return json.loads(self.rfile.read(n) or b"{}")
            except json.JSONDecodeError:
                raise BadRequest("body is not JSON") from None

        def _send(self, status, payload=None):
            data = b"" if payload is None else json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def _dispatch(self, verb):
            try:
                table, rid, query = self._route()
                if verb == "GET":
                    if rid is None:
                        self._send(200, backend.read(table, query))
                    else:
                        self._send(200, backend.get(table, rid))
                    return
                if rid is None:
                    raise BadRequest("record id missing from path")
                if verb == "PUT":
                    body = self._body()
                    if str(body.get("id", rid)) != rid:
                        raise BadRequest("id in body differs from path")
                    backend.create(table, dict(body, id=rid))
                    self._send(201)
                elif verb == "POST":
                    backend.update(table, rid, self._body())
                    self._send(200)
                else:
                    backend.delete(table, rid)
                    self._send(204)
            except BackendError as e:
                self._send(e.status, {"error": str(e)})

        def do_GET(self):
            self._dispatch("GET")

        def do_PUT(self):
            self._dispatch("PUT")

        def do_POST(self):
            self._dispatch("POST")

        def do_DELETE(self):
            self._dispatch("DELETE")

    return Handler


def serve_fixture_http(backend, port: int = 0, host: str = "127.0.0.1", background: bool = True):
    """Expose ``backend`` over HTTP; returns the server (``server_address`` holds the port)."""
    server = ThreadingHTTPServer((host, port), _make_handler(backend))
    server.daemon_threads = True
    if background:
        threading.Thread(target=server.serve_forever, daemon=True).start()
    return server


class HttpBackend:
    """CrudBackend speaking to :func:`serve_fixture_http`."""

    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base = base_url.rstrip("/")
        self.timeout = timeout
        self.verbs: list = []

    def _call(self, verb: str, path: str, body=None, query=None):
        url = self.base + path
        if query:
            url += "?" + urllib.parse.urlencode(query)
        data = None if body is None else json.dumps(body).encode()
        req = urllib.request.Request(url, data=data, method=verb)
        req.add_header("Content-Type", "application/json")
        self.verbs.append(verb)
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                raw = resp.read()
        except urllib.error.HTTPError as e:
            try:
                detail = json.loads(e.read() or b"{}").get("error", "")
            except json.JSONDecodeError:
                detail = ""
            exc = {404: NotFound, 409: Conflict, 400: BadRequest}.get(e.code, BackendError)
            raise exc(detail or f"HTTP {e.code}") from None
        return json.loads(raw) if raw else None

    @staticmethod
    def _p(table, rid=None):
        path = "/tables/" + urllib.parse.quote(table, safe="")
        if rid is not None:
            path += "/" + urllib.parse.quote(str(rid), safe="")
        return path

    def create(self, table, record):
        self._call(VERBS["create"], self._p(table, record.get("id")), body=record)

    def read(self, table, query=None):
        return self._call(VERBS["read"], self._p(table), query=query)

    def get(self, table, rid):
        return self._call(VERBS["read"], self._p(table, rid))

    def update(self, table, rid, record):
        self._call(VERBS["update"], self._p(table, rid), body=record)

    def delete(self, table, rid):
        self._call(VERBS["delete"], self._p(table, rid))


# ---------------------------------------------------------------- built-in VM

@dataclass(frozen=True)
class Cursor:
    snapshot: tuple  # rows as (id, date, *attrs)
    position: int = 0


@dataclass(frozen=True)
class BuiltinState:
    inbox: tuple = ()
    cursors: tuple = ()  # sorted ((kind, key), Cursor)

    def cursor(self, kind: str, key):
        for k, c in self.cursors:
            if k == (kind, key):
                return c
        return None

    def with_cursor(self, kind: str, key, cur: Cursor) -> "BuiltinState":
        rest = [(k, c) for k, c in self.cursors if k != (kind, key)]
        rest.append(((kind, key), cur))
        rest.sort(key=lambda kc: (kc[0][0], value_key(kc[0][1])))
        return replace(self, cursors=tuple(rest))


class PhotoConnector:
    """Native handlers for the photo relations of one store."""

    def __init__(self, backend, attributes, table: str = "photos", ack_first: bool = False):
        self.backend = backend
        self.attributes = tuple(attributes)
        self.table = table
        self.ack_first = ack_first

    @property
    def reply_arity(self) -> int:
        return 3 + len(self.attributes)

    def _row(self, r: dict) -> tuple:
        return (str(r["id"]), str(r.get("date_taken", NULL))) + tuple(
            str(r.get(a, NULL)) for a in self.attributes
        )

    def sentinel(self) -> tuple:
        return (NULL,) * (2 + len(self.attributes))

    def _next(self, state, kind, key, reply: PredRef):
        cur = state.cursor(kind, key)
        if cur.position < len(cur.snapshot):
            row = cur.snapshot[cur.position]
            state = state.with_cursor(kind, key, Cursor(cur.snapshot, cur.position + 1))
        else:
            row = self.sentinel()
        return state, [Atom(reply, (), (key,) + row)]

    def ready(self, state: BuiltinState, role: str, a: Atom) -> bool:
        """Whether ``a`` can be answered now; a pull waits for its search."""
        return role != "result" or state.cursor("search", a.vargs[0]) is not None

    def handle(self, state: BuiltinState, role: str, a: Atom) -> tuple:
        """(new state, produced atoms)."""
        if role == "cloning":
            (reply,), (key,) = a.pargs, a.vargs
            if state.cursor("clone", key) is None:
                rows = tuple(self._row(r) for r in self.backend.read(self.table))
                state = state.with_cursor("clone", key, Cursor(rows))
                if self.ack_first:
                    return state, []
            return self._next(state, "clone", key, reply)
        if role == "search":
            lo, hi, key = a.vargs
            try:
                found = self.backend.read(self.table, {"from": lo, "to": hi})
            except BadRequest as e:
                log.warning("PhotoSearch %r: %s", key, e)
                found = []
            rows = tuple(self._row(r) for r in found)
            return state.with_cursor("search", key, Cursor(rows)), []
        if role == "result":
            (reply,), (key,) = a.pargs, a.vargs
            if state.cursor("search", key) is None:
                log.warning("SearchResult for unknown search %r dropped", key)
                return state, []
            return self._next(state, "search", key, reply)
        if role == "counts":
            (reply,), (key, lo, hi) = a.pargs, a.vargs
            try:
                n = len(self.backend.read(self.table, {"from": lo, "to": hi}))
            except BadRequest as e:
                log.warning("CountsIn %r: %s", key, e)
                n = -1
            return state, [Atom(reply, (), (key, n))]
        raise ValueError(f"unknown connector role {role!r}")


def make_connector(connector: str, source: str | None = None, ack_first: bool = False) -> PhotoConnector:
    """Connector for a service name; ``source`` is a fixture path or an http URL."""
    if source and source.startswith(("http://", "https://")):
        if connector not in SERVICES:
            raise ValueError(f"unknown service {connector!r}")
        return PhotoConnector(HttpBackend(source), SERVICES[connector], ack_first=ack_first)
    path = Path(source) if source else fixture_path(connector)
    backend, meta = load_fixture(path)
    return PhotoConnector(backend, meta["attributes"], meta["table"], ack_first=ack_first)
