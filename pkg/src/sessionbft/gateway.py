"""HTTP facade over one interactive-layer node.

Translates JSON web requests into service requests for a live in-process
cluster and exposes read-only ledger queries. The gateway itself holds no
authoritative state: sessions, buffers, and the ledger all live in the
nodes, so restarting the gateway loses nothing.

JSON on this boundary, canonical binary inside; byte fields render as hex.
"""

from __future__ import annotations

import json
import threading
import time
import uuid

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import registry as reg
from .cluster import SimCluster
from .l2 import (
    REASON_COMMIT_IN_PROGRESS,
    REASON_COMMIT_REJECTED,
    REASON_COMMIT_TIMEOUT,
    REASON_DIVERGENCE,
    REASON_REPLAY,
    ROUTE_COMMIT,
)
from .model import ClusterConfig

OK_STATUS = {reg.ROUTE_CREATE_PACKAGE: 201, reg.ROUTE_START_SESSION: 201}

REASON_HTTP = {
    reg.REASON_NOT_FOUND: 404,
    reg.REASON_MALFORMED: 400,
    reg.REASON_DUPLICATE: 409,
    reg.REASON_STAGE_ORDER: 409,
    reg.REASON_BAD_SIGNATURE: 409,
    reg.REASON_ALREADY_IN_SESSION: 409,
    reg.REASON_SESSION_NOT_ACTIVE: 409,
    reg.REASON_PACKAGE_MISMATCH: 409,
    REASON_REPLAY: 409,
    REASON_COMMIT_IN_PROGRESS: 409,
    REASON_DIVERGENCE: 422,
    REASON_COMMIT_REJECTED: 422,
    REASON_COMMIT_TIMEOUT: 422,
}


def http_status_for(response_doc: dict, route: str) -> int:
    status = response_doc.get("status")
    if status == "OK":
        return OK_STATUS.get(route, 200)
    if status == "REJECTED":
        return REASON_HTTP.get(response_doc.get("body", {}).get("reason"), 500)
    return 500


def to_jsonable(value):
    """Render a canonical document for the JSON edge (bytes become hex)."""
    if isinstance(value, bytes):
        return value.hex()
    if isinstance(value, dict):
        return {k: to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    return value


class _Edge:
    """Gateway-side endpoint on the simulated transport, collecting replies."""

    def __init__(self):
        self.responses: dict[str, dict] = {}

    def on_message(self, ctx, sender, kind, payload):
        if kind in ("ClientResponse", "QueryResult"):
            request_id = payload.get("request_id")
            if request_id is not None:
                self.responses[request_id] = payload


class LiveCluster:
    """An in-process cluster pumped on demand behind the HTTP edge.

    Uses the same nodes and transport as the simulator. ``pace`` scales
    virtual time to wall-clock sleeps while serving a request (1.0 means
    the modelled delays are felt for real; 0 pumps instantly).
    """

    EDGE_ID = "edge"

    def __init__(self, config: ClusterConfig, pace: float = 0.0, persist_dir: str | None = None):
        self.config = config
        self.cluster = SimCluster(config, persist_dir=persist_dir)
        self.net = self.cluster.net
        self.node = self.cluster.entry_node
        self.edge = _Edge()
        self.net.add_node(self.EDGE_ID, self.edge, proc_delay=0)
        self.pace = pace
        self.lock = threading.RLock()

    # -- pumping ----------------------------------------------------------

    def _pump_for(self, request_id: str, wall_budget: float | None = None) -> dict | None:
        deadline = None if wall_budget is None else time.monotonic() + wall_budget
        last = self.net.now
        while self.net.pending():
            if request_id in self.edge.responses:
                break
            if deadline is not None and time.monotonic() >= deadline:
                return None
            upcoming = self.net.peek_time()
            if self.pace > 0 and upcoming is not None and upcoming > last:
                time.sleep((upcoming - last) * self.pace / 1_000_000)
            last = self.net.step()
        return self.edge.responses.pop(request_id, None)

    def _settle(self) -> None:
        """Finish any leftover propagation without pacing."""
        self.net.run_until_quiescent()

    def _drain_in_background(self, request_id: str) -> None:
        def finish():
            with self.lock:
                self.net.run_until_quiescent()
                self.edge.responses.pop(request_id, None)

        threading.Thread(target=finish, name="commit-drain", daemon=True).start()

    # -- operations -------------------------------------------------------

    def submit(self, route: str, body: dict, client_id: str,
               session_id: str | None = None, nonce: int | None = None,
               wall_budget: float | None = None):
        """Run one client request through the owning node's event loop.

        Returns (reply payload | None, virtual latency in µs). None means
        the wall budget expired before the response; pumping continues in
        the background.
        """
        request_id = uuid.uuid4().hex
        with self.lock:
            if nonce is None:
                nonce = self.node.last_nonce.get(client_id, 0) + 1
            payload = {
                "route": route,
                "body": body,
                "client_id": client_id,
                "session_id": session_id,
                "nonce": nonce,
                "request_id": request_id,
            }
            t_req = self.net.now
            self.net.send(self.EDGE_ID, self.node.node_id, "ClientRequest", payload)
            reply = self._pump_for(request_id, wall_budget)
            if reply is None:
                self._drain_in_background(request_id)
                return None, 0
            latency = self.net.now - t_req
            self._settle()
            return reply, latency

    def session_record(self, session_id: str) -> dict | None:
        with self.lock:
            return self.node.status_record(session_id)

    def tx_record(self, tx_hash: bytes) -> dict | None:
        with self.lock:
            hit = self.node.l1_lookup.get_tx(tx_hash)
            if hit is None:
                return None
            batch, ref = hit
            return {
                "session_id": batch.session_id,
                "originator_id": batch.originator_id,
                "operations": len(batch.operations),
                "l1_ref": ref.to_doc(),
            }

    def block_summaries(self, offset: int = 0, limit: int = 50) -> dict:
        with self.lock:
            ledger = self.node.l1_lookup.ledger
            window = ledger[offset : offset + limit]
            return {
                "height": len(ledger),
                "blocks": [
                    {
                        "height": b.height,
                        "block_hash": b.block_hash(),
                        "proposer_id": b.proposer_id,
                        "tx_count": len(b.tx_list),
                        "quorum_size": len(b.quorum_cert),
                    }
                    for b in window
                ],
            }

    def block_detail(self, height: int) -> dict | None:
        with self.lock:
            block = self.node.l1_lookup.get_block(height)
            return None if block is None else block.to_doc()


def _envelope(request_id: str, t_in: float, status: int, body) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={
            "request_id": request_id,
            "status": status,
            "body": to_jsonable(body),
            "t_server_in": t_in,
            "t_server_out": round(time.time() * 1000, 3),
        },
    )


def create_app(live: LiveCluster, commit_timeout_s: float = 30.0) -> FastAPI:
    app = FastAPI(title="sessionbft gateway", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.live = live

    def now_ms() -> float:
        return round(time.time() * 1000, 3)

    def rid(request: Request) -> str:
        return request.headers.get("x-request-id", uuid.uuid4().hex)

    async def read_json(request: Request) -> dict | None:
        raw = await request.body()
        if not raw:
            return {}
        try:
            doc = json.loads(raw)
        except ValueError:
            return None
        return doc if isinstance(doc, dict) else None

    def run_route(request_id: str, t_in: float, route: str, body: dict,
                  client_id: str, session_id: str | None = None,
                  nonce: int | None = None, wall_budget: float | None = None):
        reply, latency_us = live.submit(
            route, body, client_id, session_id=session_id, nonce=nonce, wall_budget=wall_budget
        )
        if reply is None:
            return _envelope(
                request_id, t_in, 202,
                {"status": "PENDING", "poll": f"/sessions/{session_id}"},
            )
        response_doc = reply["response"]
        status = http_status_for(response_doc, route)
        body_out = {
            "status": response_doc["status"],
            "body": response_doc["body"],
            "virtual_latency_us": latency_us,
        }
        if reply.get("session_id"):
            body_out["session_id"] = reply["session_id"]
        return _envelope(request_id, t_in, status, body_out)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "node_id": live.node.node_id, "config": live.config.label}

    @app.post("/packages")
    async def create_package(request: Request):
        t_in, request_id = now_ms(), rid(request)
        doc = await read_json(request)
        if doc is None:
            return _envelope(request_id, t_in, 400, {"reason": "invalid_json"})
        body = dict(doc)
        signature = body.get("origin_signature")
        if isinstance(signature, str):
            try:
                body["origin_signature"] = bytes.fromhex(signature)
            except ValueError:
                return _envelope(request_id, t_in, 400, {"reason": "invalid_signature_hex"})
        elif "origin_signature" not in body:
            # Convenience for interactive use: sign as the default supplier.
            if isinstance(body.get("package_id"), str) and isinstance(body.get("expected_contents"), list):
                body["origin_signature"] = reg.sign_package(
                    body["package_id"], body["expected_contents"]
                )
        client = doc.get("client_id", "gateway-client")
        return run_route(request_id, t_in, reg.ROUTE_CREATE_PACKAGE, body, client,
                         nonce=doc.get("nonce"))

    @app.post("/sessions")
    async def start_session(request: Request):
        t_in, request_id = now_ms(), rid(request)
        doc = await read_json(request)
        if doc is None:
            return _envelope(request_id, t_in, 400, {"reason": "invalid_json"})
        client = doc.get("client_id", "gateway-client")
        return run_route(request_id, t_in, reg.ROUTE_START_SESSION, dict(doc), client,
                         nonce=doc.get("nonce"))

    STEP_ROUTES = {
        "scan": reg.ROUTE_SCAN,
        "validate": reg.ROUTE_VALIDATE,
        "quality-check": reg.ROUTE_QUALITY_CHECK,
        "label": reg.ROUTE_LABEL,
        "abort": reg.ROUTE_ABORT,
    }

    @app.post("/sessions/{session_id}/{step}")
    async def session_step(session_id: str, step: str, request: Request):
        t_in, request_id = now_ms(), rid(request)
        doc = await read_json(request)
        if doc is None:
            return _envelope(request_id, t_in, 400, {"reason": "invalid_json"})
        client = doc.get("client_id", "gateway-client")
        if step == "commit":
            return run_route(request_id, t_in, ROUTE_COMMIT, {}, client,
                             session_id=session_id, nonce=doc.get("nonce"),
                             wall_budget=commit_timeout_s)
        route = STEP_ROUTES.get(step)
        if route is None:
            return _envelope(request_id, t_in, 404, {"reason": "unknown_route"})
        return run_route(request_id, t_in, route, dict(doc), client,
                         session_id=session_id, nonce=doc.get("nonce"))

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str, request: Request):
        t_in, request_id = now_ms(), rid(request)
        record = live.session_record(session_id)
        if record is None:
            return _envelope(request_id, t_in, 404, {"reason": "not_found"})
        return _envelope(request_id, t_in, 200, record)

    @app.get("/tx/{tx_hash}")
    def get_tx(tx_hash: str, request: Request):
        t_in, request_id = now_ms(), rid(request)
        try:
            raw = bytes.fromhex(tx_hash)
        except ValueError:
            return _envelope(request_id, t_in, 400, {"reason": "invalid_hash_hex"})
        record = live.tx_record(raw)
        if record is None:
            return _envelope(request_id, t_in, 404, {"reason": "not_found"})
        return _envelope(request_id, t_in, 200, record)

    @app.get("/blocks")
    def get_blocks(request: Request, offset: int = 0, limit: int = 50):
        t_in, request_id = now_ms(), rid(request)
        return _envelope(request_id, t_in, 200, live.block_summaries(offset, limit))

    @app.get("/blocks/{height}")
    def get_block(height: int, request: Request):
        t_in, request_id = now_ms(), rid(request)
        detail = live.block_detail(height)
        if detail is None:
            return _envelope(request_id, t_in, 404, {"reason": "not_found"})
        return _envelope(request_id, t_in, 200, detail)

    return app


def serve(config: ClusterConfig, host: str = "127.0.0.1", port: int = 8080,
          pace: float = 1.0, commit_timeout_s: float = 30.0,
          persist_dir: str | None = None, console_dir: str | None = None) -> None:
    """Run the gateway over a fresh live cluster (blocking)."""
    import uvicorn

    live = LiveCluster(config, pace=pace, persist_dir=persist_dir)
    app = create_app(live, commit_timeout_s=commit_timeout_s)
    if console_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/console", StaticFiles(directory=console_dir, html=True), name="console")
    uvicorn.run(app, host=host, port=port, log_level="warning")
