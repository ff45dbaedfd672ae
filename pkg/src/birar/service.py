"""JSON-over-HTTP scoring and retrieval service.

Schema version 1::

    GET  /healthz       -> {"status": "ok", "schema_version": 1}
    POST /v1/score      {"trajectory": <trajectory JSON>, "gold": str,
                         "modes": ["forward", "backward"]?, "variant": str?}
                        ("modes": [] scores the outcome reward only)
                        -> {"schema_version": 1, "breakdown": <RewardBreakdown>}
    POST /v1/retrieve   {"query": str, "k": int?}
                        -> {"schema_version": 1, "results": [{"doc_id", "score", "title", "text"}]}

Schema violations answer 400 ``{"error": ...}``; unexpected faults answer
500 ``{"error": ..., "error_id": ...}`` with the traceback logged under the
same id. The handlers call :func:`score_request` and
:func:`retrieve_request`, which the CLI uses too.
"""

from __future__ import annotations

import json
import logging
import uuid
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .errors import BirarError, TrajectoryError
from .infodist import NidVariant
from .retrieval import search
from .rewards import score
from .trajectory import Trajectory, parse

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MAX_BODY = 1 << 22
_MODES = ("forward", "backward")


class RequestError(BirarError):
    module = "service"


def _require(obj, key, kind, optional=False):
    if key not in obj or obj[key] is None:
        if optional:
            return None
        raise RequestError(f"missing field {key!r}")
    value = obj[key]
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise RequestError(f"field {key!r} has the wrong type")
    return value


def score_request(provider, req: dict) -> dict:
    if not isinstance(req, dict):
        raise RequestError("request body must be a JSON object")
    gold = _require(req, "gold", str)
    traj_obj = req.get("trajectory")
    if isinstance(traj_obj, str):
        traj = parse(traj_obj, str(req.get("question", "")))
    elif isinstance(traj_obj, dict):
        if not isinstance(traj_obj.get("steps"), list):
            raise RequestError("trajectory.steps must be a list")
        traj = Trajectory.from_json(traj_obj)
    else:
        raise RequestError("field 'trajectory' must be an object or raw rollout text")
    modes = _require(req, "modes", list, optional=True)
    modes = list(_MODES) if modes is None else modes
    if any(m not in _MODES for m in modes):
        raise RequestError(f"modes must be drawn from {list(_MODES)}")
    try:
        variant = NidVariant(req.get("variant", NidVariant.PAPER_MIN_MIN.value))
    except ValueError:
        raise RequestError(f"unknown variant {req.get('variant')!r}") from None
    breakdown = score(provider, traj, gold, modes, variant)
    return {"schema_version": SCHEMA_VERSION, "breakdown": breakdown.to_json()}


def retrieve_request(index, docs: dict, req: dict) -> dict:
    if not isinstance(req, dict):
        raise RequestError("request body must be a JSON object")
    query = _require(req, "query", str)
    k = _require(req, "k", int, optional=True)
    k = 10 if k is None else k
    if k < 1:
        raise RequestError("k must be >= 1")
    results = []
    for doc_id, s in search(index, query, k):
        d = docs.get(doc_id)
        results.append({"doc_id": doc_id, "score": s,
                        "title": d.title if d else "", "text": d.text if d else ""})
    return {"schema_version": SCHEMA_VERSION, "results": results}


class _Handler(BaseHTTPRequestHandler):
    server_version = "birar/1"
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.info("%s %s", self.address_string(), fmt % args)

    def _send(self, code: int, obj: dict) -> None:
        body = json.dumps(obj).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path == "/healthz":
            self._send(200, {"status": "ok", "schema_version": SCHEMA_VERSION})
        else:
            self._send(404, {"error": f"no route {self.path}", "schema_version": SCHEMA_VERSION})

    def do_POST(self):
        routes = {"/v1/score": self._score, "/v1/retrieve": self._retrieve}
        handler = routes.get(self.path)
        if handler is None:
            self._send(404, {"error": f"no route {self.path}", "schema_version": SCHEMA_VERSION})
            return
        try:
            length = int(self.headers.get("Content-Length") or 0)
            if length > MAX_BODY:
                raise RequestError(f"body larger than {MAX_BODY} bytes")
            try:
                req = json.loads(self.rfile.read(length) or b"null")
            except ValueError as exc:
                raise RequestError(f"body is not JSON: {exc}") from None
            self._send(200, handler(req))
        except (RequestError, TrajectoryError) as exc:
            self._send(400, {"error": str(exc), "schema_version": SCHEMA_VERSION})
        except Exception as exc:  # noqa: BLE001 - every fault gets an id
            error_id = uuid.uuid4().hex
            log.exception("error %s on %s", error_id, self.path)
            msg = str(exc) if isinstance(exc, BirarError) else type(exc).__name__
            self._send(500, {"error": msg, "error_id": error_id, "schema_version": SCHEMA_VERSION})

    def _score(self, req):
        if self.server.provider is None:
            raise RequestError("service was started without a provider")
        return score_request(self.server.provider, req)

    def _retrieve(self, req):
        if self.server.index is None:
            raise RequestError("service was started without an index")
        return retrieve_request(self.server.index, self.server.docs, req)


def make_server(host: str, port: int, provider=None, index=None, docs=None) -> ThreadingHTTPServer:
    """Bound (not yet serving) server; ``port=0`` picks a free port."""
    srv = ThreadingHTTPServer((host, port), _Handler)
    srv.daemon_threads = True
    srv.provider = provider
    srv.index = index
    srv.docs = {d.doc_id: d for d in docs or ()}
    return srv
