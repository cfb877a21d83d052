"""Interactive session layer: execute, cross-validate, buffer, commit.

A node here answers clients directly. Each request is executed locally,
wrapped into a transaction together with its response, and cross-checked:
peers re-execute it against their own replica and the operation is
accepted only if every reported result is byte-identical (a single node
runs the same validation internally). Accepted session operations collect
in an ordered per-session buffer; committing a session ships the whole
buffer to the consensus layer as one batch and stamps the session with the
resulting ledger reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import codec, registry as reg
from .l1 import HONEST, SILENT, WRONG_RESULT, submit_authenticator
from .model import (
    MS,
    STATUS_OK,
    BatchTransaction,
    ServiceRequest,
    ServiceResponse,
    Transaction,
)
from .registry import AppState, Registry, RouteNotFoundError
from .simnet import NodeContext

ROUTE_COMMIT = "/sessions/{id}/commit"

REASON_REPLAY = "replay"
REASON_DIVERGENCE = "consensus_divergence"
REASON_COMMIT_TIMEOUT = "commit_timeout"
REASON_COMMIT_REJECTED = "l1_rejected"
REASON_COMMIT_IN_PROGRESS = "commit_in_progress"

# Idle sessions expire after this much virtual time.
DEFAULT_SESSION_TTL = 10 * 60 * 1000 * MS

PEER_TIMEOUT_FACTOR = 20
COMMIT_TIMEOUT_FACTOR = 400


@dataclass
class _PendingOp:
    request: ServiceRequest
    tx: Transaction
    reply_to: str
    awaiting: set = field(default_factory=set)
    votes: dict = field(default_factory=dict)  # peer -> (valid, digest)
    generation: int = 0
    request_id: object = None


@dataclass
class _PendingCommit:
    session_id: str
    reply_to: str
    generation: int
    request_id: object = None


class L2Node:
    """One interactive-layer node: originator, validator, and session owner."""

    def __init__(
        self,
        node_id: str,
        peers: list[str],
        registry: Registry,
        contact_l1: str,
        l1_lookup=None,
        behavior: str = HONEST,
        session_ttl: int = DEFAULT_SESSION_TTL,
    ):
        self.node_id = node_id
        self.peers = list(peers)
        self.registry = registry
        self.contact_l1 = contact_l1
        self.l1_lookup = l1_lookup  # read-only ledger view for hash queries
        self.behavior = behavior
        self.session_ttl = session_ttl
        self.app_state = AppState()
        self.session_buffers: dict[str, list[Transaction]] = {}
        self.session_activity: dict[str, int] = {}
        self.last_nonce: dict[str, int] = {}
        self.session_counter = 0
        self.pending_op: _PendingOp | None = None
        self.pending_commits: dict[str, _PendingCommit] = {}
        self.request_queue: list[tuple[str, dict]] = []
        self.generation = 0
        self.degraded_rounds = 0
        self.expired_sessions: list[str] = []

    # -- helpers ------------------------------------------------------------

    def bootstrap_from_ledger(self, ledger) -> None:
        """Restart-from-replay: rebuild state from a committed ledger.

        Folds every committed operation's writes over genesis and stamps
        the replayed sessions as committed with their ledger references.
        The only recovery path for a restarted node; in-flight sessions
        that never reached the consensus layer are gone by design.
        """
        state = reg.AppState()
        for block in ledger:
            for batch in block.tx_list:
                for op in batch.operations:
                    state = state.apply_delta(op.response.state_delta)
                ref = {"block_height": block.height, "tx_hash": batch.tx_hash()}
                doc = state.get(reg.session_key(batch.session_id))
                if doc is not None:
                    committed = dict(doc, status=reg.SESSION_COMMITTED, l1_ref=ref)
                    state = state.apply_delta([(reg.session_key(batch.session_id), committed)])
        self.app_state = state
        self.session_buffers.clear()
        self.session_activity.clear()

    def session_doc(self, session_id: str) -> dict | None:
        return self.app_state.get(reg.session_key(session_id))

    def status_record(self, session_id: str) -> dict | None:
        doc = self.session_doc(session_id)
        if doc is None:
            return None
        record = {
            "session_id": session_id,
            "status": doc["status"],
            "stage": doc["stage"],
            "l1_ref": doc.get("l1_ref"),
            "operations": len(self.session_buffers.get(session_id, ())),
        }
        return record

    def _reply(self, ctx: NodeContext, to: str, request_id, response: ServiceResponse, extra=None):
        payload = {
            "request_id": request_id,
            "response": response.to_doc(),
        }
        if extra:
            payload.update(extra)
        ctx.send(to, "ClientResponse", payload)

    def _touch(self, ctx: NodeContext, session_id: str) -> None:
        self.session_activity[session_id] = ctx.now

    def _expire_idle_sessions(self, ctx: NodeContext) -> None:
        for sid, last in list(self.session_activity.items()):
            if ctx.now - last <= self.session_ttl:
                continue
            doc = self.session_doc(sid)
            if doc is None or doc["status"] != reg.SESSION_ACTIVE:
                self.session_activity.pop(sid, None)
                continue
            aborted = dict(doc, status=reg.SESSION_ABORTED)
            self.app_state = self.app_state.apply_delta([(reg.session_key(sid), aborted)])
            self.session_buffers.pop(sid, None)
            self.session_activity.pop(sid, None)
            self.expired_sessions.append(sid)
            for peer in self.peers:
                ctx.send(peer, "SessionUpdate", {"session": aborted, "drop_buffer": True})

    # -- message dispatch ----------------------------------------------------

    def on_message(self, ctx: NodeContext, sender: str, kind: str, payload: dict) -> None:
        if self.behavior == SILENT:
            return
        self._expire_idle_sessions(ctx)
        if kind == "ClientRequest":
            if self.pending_op is not None:
                self.request_queue.append((sender, payload))
            else:
                self._start_client_request(ctx, sender, payload)
        elif kind == "ReplicateTx":
            self._on_replicate(ctx, sender, payload)
        elif kind == "ValidationVote":
            self._on_validation_vote(ctx, sender, payload)
        elif kind == "ApplyDelta":
            self._on_apply_delta(ctx, sender, payload)
        elif kind == "SessionUpdate":
            self._on_session_update(ctx, payload)
        elif kind == "CommitResult":
            self._on_commit_result(ctx, payload)
        elif kind == "PeerTimeout":
            self._on_peer_timeout(ctx, payload)
        elif kind == "CommitTimeout":
            self._on_commit_timeout(ctx, payload)
        elif kind == "QueryStatus":
            self._on_query(ctx, sender, payload)

    def _drain_queue(self, ctx: NodeContext) -> None:
        while self.request_queue and self.pending_op is None:
            sender, payload = self.request_queue.pop(0)
            self._start_client_request(ctx, sender, payload)

    # -- client requests ------------------------------------------------------

    def _start_client_request(self, ctx: NodeContext, sender: str, payload: dict) -> None:
        request_id = payload.get("request_id")
        try:
            request = ServiceRequest.from_doc(
                {k: payload[k] for k in ("route", "body", "client_id", "session_id", "nonce")}
            )
        except (KeyError, TypeError):
            self._reply(ctx, sender, request_id, ServiceResponse.rejected(reg.REASON_MALFORMED))
            return
        last = self.last_nonce.get(request.client_id)
        if last is not None and request.nonce <= last:
            self._reply(ctx, sender, request_id, ServiceResponse.rejected(REASON_REPLAY, nonce=request.nonce))
            return
        self.last_nonce[request.client_id] = request.nonce
        if request.route == ROUTE_COMMIT:
            self._start_commit(ctx, sender, request_id, request)
            return
        try:
            self.registry.resolve(request.route)
        except RouteNotFoundError:
            self._reply(ctx, sender, request_id,
                        ServiceResponse.rejected(reg.REASON_NOT_FOUND, route=request.route))
            return
        request = self._enrich(request)
        if isinstance(request, ServiceResponse):  # enrichment rejected it
            self._reply(ctx, sender, request_id, request)
            return
        ctx.charge(ctx.exec_cost())
        response, _ = self.registry.execute(request, self.app_state)
        if not response.ok:
            self._reply(ctx, sender, request_id, response)
            return
        tx = Transaction(request=request, response=response, originator_id=self.node_id)
        if not self.peers:
            # Single-node deployment still runs the validation step internally.
            ctx.charge(ctx.exec_cost())
            revalidated, _ = self.registry.execute(request, self.app_state)
            if codec.canonical_serialize(revalidated) != codec.canonical_serialize(response):
                self._reply(ctx, sender, request_id,
                            ServiceResponse.rejected(REASON_DIVERGENCE))
                return
            self._accept(ctx, tx)
            self._reply(ctx, sender, request_id, response, {"session_id": request.session_id})
            return
        self.generation += 1
        pending = _PendingOp(
            request=request,
            tx=tx,
            reply_to=sender,
            awaiting=set(self.peers),
            generation=self.generation,
            request_id=request_id,
        )
        self.pending_op = pending
        tx_doc = tx.to_doc()
        auth = codec.authenticate(codec.node_key(self.node_id), tx.tx_hash())
        for peer in self.peers:
            ctx.send(peer, "ReplicateTx", {"tx": tx_doc, "authenticator": auth})
        ctx.set_timer(
            PEER_TIMEOUT_FACTOR * ctx.net.model.base_delay,
            "PeerTimeout",
            {"generation": self.generation},
        )

    def _enrich(self, request: ServiceRequest):
        """Originator-side request preparation before execution.

        Session creation gets a fresh session id and the full package
        descriptor from local state, so the executed request is
        self-contained and replays identically on any replica.
        """
        if request.route == reg.ROUTE_START_SESSION:
            package_id = request.body.get("package_id")
            if not isinstance(package_id, str) or not package_id:
                return ServiceResponse.rejected(reg.REASON_MALFORMED)
            pkg = self.app_state.get(reg.package_key(package_id))
            if pkg is None:
                return ServiceResponse.rejected(reg.REASON_NOT_FOUND, package_id=package_id)
            self.session_counter += 1
            session_id = f"{self.node_id}-s{self.session_counter}"
            descriptor = {
                k: pkg[k]
                for k in ("package_id", "expected_contents", "origin_signature", "supplier_id")
            }
            body = dict(request.body, package=descriptor)
            return ServiceRequest(
                route=request.route,
                body=body,
                client_id=request.client_id,
                session_id=session_id,
                nonce=request.nonce,
            )
        return request

    def _accept(self, ctx: NodeContext, tx: Transaction) -> None:
        self.app_state = self.app_state.apply_delta(tx.response.state_delta)
        sid = tx.request.session_id
        if sid is not None:
            doc = self.session_doc(sid)
            if doc is not None and doc["status"] == reg.SESSION_ABORTED:
                self.session_buffers.pop(sid, None)
            else:
                self.session_buffers.setdefault(sid, []).append(tx)
                self._touch(ctx, sid)

    def _finish_pending(self, ctx: NodeContext, accept: bool, degraded: bool = False) -> None:
        pending = self.pending_op
        self.pending_op = None
        if accept:
            self._accept(ctx, pending.tx)
            tx_doc = pending.tx.to_doc()
            for peer in self.peers:
                ctx.send(peer, "ApplyDelta", {"tx": tx_doc})
            extra = {"session_id": pending.request.session_id}
            if degraded:
                self.degraded_rounds += 1
                extra["degraded"] = True
            self._reply(ctx, pending.reply_to, pending.request_id, pending.tx.response, extra)
        else:
            report = {
                peer: {"valid": valid, "response_digest": digest.hex()}
                for peer, (valid, digest) in sorted(pending.votes.items())
            }
            self._reply(
                ctx, pending.reply_to, pending.request_id,
                ServiceResponse.rejected(REASON_DIVERGENCE, votes=report),
            )
        self._drain_queue(ctx)

    def _evaluate_votes(self, ctx: NodeContext, timed_out: bool = False) -> None:
        pending = self.pending_op
        if pending is None:
            return
        if pending.awaiting and not timed_out:
            return
        own_digest = codec.digest_of(pending.tx.response)
        all_match = all(
            valid and digest == own_digest for valid, digest in pending.votes.values()
        )
        if not all_match:
            self._finish_pending(ctx, accept=False)
        else:
            # Unreachable peers are tolerated: accept when every peer that
            # answered agrees, and flag the round as degraded.
            self._finish_pending(ctx, accept=True, degraded=bool(pending.awaiting))

    # -- peer validation -------------------------------------------------------

    def _on_replicate(self, ctx: NodeContext, sender: str, payload: dict) -> None:
        try:
            tx = Transaction.from_doc(payload["tx"])
        except (KeyError, ValueError, TypeError):
            return
        if not codec.verify_authenticator(
            codec.node_key(tx.originator_id), tx.tx_hash(), payload.get("authenticator", b"")
        ):
            return
        if tx.originator_id != sender:
            return
        valid, digest = self.validate_transaction(ctx, tx)
        if self.behavior == WRONG_RESULT:
            # Byzantine peer: claims validity but reports a forged result.
            valid = True
            digest = codec.digest_of(
                ServiceResponse(STATUS_OK, dict(tx.response.body, forged=1), tx.response.state_delta)
            )
        vote = {
            "tx_hash": tx.tx_hash(),
            "valid": valid,
            "response_digest": digest,
            "voter": self.node_id,
        }
        vote["authenticator"] = codec.authenticate(
            codec.node_key(self.node_id), codec.digest_of({k: vote[k] for k in ("tx_hash", "valid", "response_digest", "voter")})
        )
        ctx.send(sender, "ValidationVote", vote)

    def validate_transaction(self, ctx: NodeContext, tx: Transaction) -> tuple[bool, bytes]:
        """Re-execute the embedded request against local state and compare.

        Returns (valid, digest-of-local-response). Malformed content and
        constraint violations surface as an unequal or rejected local
        response, never as an exception.
        """
        ctx.charge(ctx.exec_cost())
        try:
            local_response, _ = self.registry.execute(tx.request, self.app_state)
        except RouteNotFoundError:
            return False, codec.digest_of(ServiceResponse.rejected(reg.REASON_NOT_FOUND))
        digest = codec.digest_of(local_response)
        if not local_response.ok:
            return False, digest
        matches = codec.canonical_serialize(local_response) == codec.canonical_serialize(tx.response)
        return matches, digest

    def _on_validation_vote(self, ctx: NodeContext, sender: str, payload: dict) -> None:
        pending = self.pending_op
        if pending is None:
            return
        try:
            core = {k: payload[k] for k in ("tx_hash", "valid", "response_digest", "voter")}
            auth = payload["authenticator"]
        except KeyError:
            return
        if core["voter"] != sender or sender not in pending.awaiting:
            return
        if core["tx_hash"] != pending.tx.tx_hash():
            return
        if not codec.verify_authenticator(codec.node_key(sender), codec.digest_of(core), auth):
            return
        pending.awaiting.discard(sender)
        pending.votes[sender] = (core["valid"], core["response_digest"])
        self._evaluate_votes(ctx)

    def _on_peer_timeout(self, ctx: NodeContext, payload: dict) -> None:
        pending = self.pending_op
        if pending is None or pending.generation != payload.get("generation"):
            return
        self._evaluate_votes(ctx, timed_out=True)

    def _on_apply_delta(self, ctx: NodeContext, sender: str, payload: dict) -> None:
        try:
            tx = Transaction.from_doc(payload["tx"])
        except (KeyError, ValueError, TypeError):
            return
        if tx.originator_id != sender:
            return
        self._accept(ctx, tx)

    def _on_session_update(self, ctx: NodeContext, payload: dict) -> None:
        session = payload.get("session")
        if not isinstance(session, dict) or "session_id" not in session:
            return
        sid = session["session_id"]
        self.app_state = self.app_state.apply_delta([(reg.session_key(sid), session)])
        if payload.get("drop_buffer"):
            self.session_buffers.pop(sid, None)
            self.session_activity.pop(sid, None)

    # -- commit ------------------------------------------------------------------

    def _start_commit(self, ctx: NodeContext, sender: str, request_id, request: ServiceRequest) -> None:
        sid = request.session_id
        doc = self.session_doc(sid) if sid else None
        if doc is None:
            self._reply(ctx, sender, request_id,
                        ServiceResponse.rejected(reg.REASON_NOT_FOUND, session_id=sid))
            return
        if doc["status"] != reg.SESSION_ACTIVE:
            reason = (REASON_COMMIT_IN_PROGRESS
                      if doc["status"] == reg.SESSION_COMMITTING else reg.REASON_SESSION_NOT_ACTIVE)
            self._reply(ctx, sender, request_id,
                        ServiceResponse.rejected(reason, session_id=sid, status=doc["status"]))
            return
        if doc["stage"] != "Labeled":
            self._reply(ctx, sender, request_id,
                        ServiceResponse.rejected(reg.REASON_STAGE_ORDER, session_id=sid,
                                                 stage=doc["stage"], required="Labeled"))
            return
        buffer = self.session_buffers.get(sid)
        if not buffer:
            self._reply(ctx, sender, request_id,
                        ServiceResponse.rejected(reg.REASON_MALFORMED, session_id=sid))
            return
        ctx.charge(ctx.exec_cost())
        batch = BatchTransaction(session_id=sid, operations=tuple(buffer), originator_id=self.node_id)
        committing = dict(doc, status=reg.SESSION_COMMITTING)
        self.app_state = self.app_state.apply_delta([(reg.session_key(sid), committing)])
        self.generation += 1
        self.pending_commits[sid] = _PendingCommit(
            session_id=sid, reply_to=sender, generation=self.generation, request_id=request_id
        )
        ctx.send(self.contact_l1, "SubmitBatch", {
            "batch": batch.to_doc(),
            "authenticator": submit_authenticator(self.node_id, batch),
            "relay": False,
        })
        ctx.set_timer(
            COMMIT_TIMEOUT_FACTOR * ctx.net.model.base_delay,
            "CommitTimeout",
            {"session_id": sid, "generation": self.generation},
        )
        self._touch(ctx, sid)

    def _on_commit_result(self, ctx: NodeContext, payload: dict) -> None:
        sid = payload.get("session_id")
        pending = self.pending_commits.pop(sid, None)
        if pending is None:
            return
        doc = self.session_doc(sid)
        if doc is None or doc["status"] != reg.SESSION_COMMITTING:
            return
        if payload.get("committed") and payload.get("l1_ref") is not None:
            committed = dict(doc, status=reg.SESSION_COMMITTED, l1_ref=payload["l1_ref"])
            self.app_state = self.app_state.apply_delta([(reg.session_key(sid), committed)])
            self.session_buffers.pop(sid, None)
            self.session_activity.pop(sid, None)
            for peer in self.peers:
                ctx.send(peer, "SessionUpdate", {"session": committed, "drop_buffer": True})
            response = ServiceResponse(
                STATUS_OK,
                {"session_id": sid, "status": reg.SESSION_COMMITTED, "l1_ref": payload["l1_ref"]},
            )
            self._reply(ctx, pending.reply_to, pending.request_id, response, {"session_id": sid})
        else:
            reverted = dict(doc, status=reg.SESSION_ACTIVE)
            self.app_state = self.app_state.apply_delta([(reg.session_key(sid), reverted)])
            body = {"session_id": sid, "tally": payload.get("tally", {})}
            self._reply(
                ctx, pending.reply_to, pending.request_id,
                ServiceResponse.rejected(REASON_COMMIT_REJECTED, **body),
            )

    def _on_commit_timeout(self, ctx: NodeContext, payload: dict) -> None:
        sid = payload.get("session_id")
        pending = self.pending_commits.get(sid)
        if pending is None or pending.generation != payload.get("generation"):
            return
        self.pending_commits.pop(sid, None)
        doc = self.session_doc(sid)
        if doc is not None and doc["status"] == reg.SESSION_COMMITTING:
            reverted = dict(doc, status=reg.SESSION_ACTIVE)
            self.app_state = self.app_state.apply_delta([(reg.session_key(sid), reverted)])
        self._reply(
            ctx, pending.reply_to, pending.request_id,
            ServiceResponse.rejected(REASON_COMMIT_TIMEOUT, session_id=sid),
        )

    # -- status queries -------------------------------------------------------------

    def _on_query(self, ctx: NodeContext, sender: str, payload: dict) -> None:
        request_id = payload.get("request_id")
        session_id = payload.get("session_id")
        tx_hash = payload.get("tx_hash")
        if session_id is not None:
            record = self.status_record(session_id)
            ctx.send(sender, "QueryResult", {
                "request_id": request_id,
                "found": record is not None,
                "record": record,
            })
            return
        if tx_hash is not None and self.l1_lookup is not None:
            hit = self.l1_lookup.get_tx(tx_hash)
            ctx.send(sender, "QueryResult", {
                "request_id": request_id,
                "found": hit is not None,
                "record": {"l1_ref": hit[1].to_doc(), "session_id": hit[0].session_id} if hit else None,
            })
            return
        ctx.send(sender, "QueryResult", {"request_id": request_id, "found": False, "record": None})
