"""Quorum consensus layer: propose, vote, commit, hash-chained ledger.

One consensus instance runs per block height. The proposer for a height
rotates round-robin, advancing on round timeout so a crashed or silent
proposer cannot stall the layer. Validators accept a proposal only if
re-executing every contained operation against their own replica state
reproduces the embedded responses byte for byte; a commit needs a quorum
certificate of accepting votes.

Byzantine behaviors are injectable per node: WrongResult tampers with
proposals and votes accept on anything, Equivocate sends conflicting
proposals for one height, Silent sends nothing at all.
"""

from __future__ import annotations

from . import codec
from .chain import Block, BlockStore, L1Ref, cert_valid, vote_payload
from .model import BatchTransaction, quorum
from .registry import AppState, Registry, RouteNotFoundError
from .simnet import NodeContext

HONEST = "Honest"
WRONG_RESULT = "WrongResult"
EQUIVOCATE = "Equivocate"
SILENT = "Silent"

BEHAVIORS = (HONEST, WRONG_RESULT, EQUIVOCATE, SILENT)

ACCEPT = "ACCEPT"
REJECT = "REJECT"

# A proposer gets this many base-delay units per round before rotation.
ROUND_TIMEOUT_FACTOR = 20


def submit_authenticator(sender_id: str, batch: BatchTransaction) -> bytes:
    return codec.authenticate(codec.node_key(sender_id), batch.tx_hash())


class L1Node:
    """One consensus-layer validator with its own ledger and replica state."""

    def __init__(
        self,
        node_id: str,
        cluster: list[str],
        registry: Registry,
        behavior: str = HONEST,
        store: BlockStore | None = None,
    ):
        self.node_id = node_id
        self.cluster = list(cluster)
        self.index = self.cluster.index(node_id)
        self.n = len(cluster)
        self.registry = registry
        self.behavior = behavior
        self.app_state = AppState()
        self.ledger: list[Block] = []
        self.tx_index: dict[bytes, tuple[BatchTransaction, L1Ref]] = {}
        self.committed_sessions: set[str] = set()
        self.mempool: list[BatchTransaction] = []
        self.round = 0
        # height -> (reply target, session ids) for submissions we received
        # directly from an interactive-layer node.
        self.pending_replies: dict[str, str] = {}
        # (height) votes: block_hash -> {voter: verdict}
        self.votes: dict[bytes, dict[str, str]] = {}
        self.known_blocks: dict[bytes, Block] = {}
        self.proposed_rounds: set[tuple[int, int]] = set()
        self.seen_proposals: dict[tuple[int, int, str], bytes] = {}
        self.equivocation_flags: list[dict] = []
        self.store = store
        if store is not None:
            for block in store.load():
                self._adopt(block, persist=False)

    # -- read-only lookups ------------------------------------------------

    @property
    def height(self) -> int:
        return len(self.ledger)

    def get_block(self, height: int) -> Block | None:
        if 0 <= height < len(self.ledger):
            return self.ledger[height]
        return None

    def get_tx(self, tx_hash: bytes) -> tuple[BatchTransaction, L1Ref] | None:
        return self.tx_index.get(tx_hash)

    def proposer_for(self, height: int, round_no: int) -> str:
        return self.cluster[(height + round_no) % self.n]

    # -- message handling --------------------------------------------------

    def on_message(self, ctx: NodeContext, sender: str, kind: str, payload: dict) -> None:
        if self.behavior == SILENT:
            return
        if kind == "SubmitBatch":
            self._on_submit(ctx, sender, payload)
        elif kind == "Proposal":
            self._on_proposal(ctx, sender, payload)
        elif kind == "Vote":
            self._on_vote(ctx, payload)
        elif kind == "CommitNotice":
            self._on_commit_notice(ctx, payload)
        elif kind == "RoundTimeout":
            self._on_round_timeout(ctx, payload)

    def _peers(self) -> list[str]:
        return [nid for nid in self.cluster if nid != self.node_id]

    def _arm_round_timer(self, ctx: NodeContext) -> None:
        timeout = ROUND_TIMEOUT_FACTOR * ctx.net.model.base_delay
        ctx.set_timer(timeout, "RoundTimeout", {"height": self.height, "round": self.round})

    def _on_submit(self, ctx: NodeContext, sender: str, payload: dict) -> None:
        try:
            batch = BatchTransaction.from_doc(payload["batch"])
        except (KeyError, ValueError, TypeError):
            return
        relayed = payload.get("relay", False)
        if not relayed:
            if not codec.verify_authenticator(
                codec.node_key(sender), batch.tx_hash(), payload.get("authenticator", b"")
            ):
                return
        ctx.charge(ctx.exec_cost())
        if batch.session_id in self.committed_sessions:
            if not relayed:
                existing = self.tx_index.get(batch.tx_hash())
                ctx.send(sender, "CommitResult", {
                    "session_id": batch.session_id,
                    "committed": False,
                    "l1_ref": existing[1].to_doc() if existing else None,
                    "reason": "duplicate_session",
                })
            return
        if any(b.session_id == batch.session_id for b in self.mempool):
            if not relayed:
                self.pending_replies[batch.session_id] = sender
            return
        self.mempool.append(batch)
        if not relayed:
            self.pending_replies[batch.session_id] = sender
            relay_doc = {"batch": payload["batch"], "relay": True}
            for peer in self._peers():
                ctx.send(peer, "SubmitBatch", relay_doc)
        self._arm_round_timer(ctx)
        self._maybe_propose(ctx)

    def _build_block(self) -> Block:
        prev = self.ledger[-1].block_hash() if self.ledger else codec.ZERO_DIGEST
        return Block(
            height=self.height,
            prev_hash=prev,
            tx_list=tuple(self.mempool),
            proposer_id=self.node_id,
        )

    def _tampered_doc(self, block: Block) -> dict:
        """Deterministically corrupt one embedded response (WrongResult)."""
        doc = codec.decode(codec.canonical_serialize(block.header_doc()))
        first_op = doc["tx_list"][0]["operations"][0]
        first_op["response"]["body"] = dict(first_op["response"]["body"], forged=1)
        return doc

    def _maybe_propose(self, ctx: NodeContext) -> None:
        if not self.mempool:
            return
        if self.proposer_for(self.height, self.round) != self.node_id:
            return
        key = (self.height, self.round)
        if key in self.proposed_rounds:
            return
        self.proposed_rounds.add(key)
        ctx.charge(ctx.exec_cost())
        block = self._build_block()
        honest_doc = block.header_doc()
        peers = self._peers()
        if self.behavior == EQUIVOCATE:
            variant = self._tampered_doc(block)
            half = len(peers) // 2
            for peer in peers[:half]:
                ctx.send(peer, "Proposal", {"round": self.round, "block": honest_doc})
            for peer in peers[half:]:
                ctx.send(peer, "Proposal", {"round": self.round, "block": variant})
            self._record_own_vote(ctx, block, broadcast=False)
            return
        if self.behavior == WRONG_RESULT:
            doc = self._tampered_doc(block)
        else:
            doc = honest_doc
        for peer in peers:
            ctx.send(peer, "Proposal", {"round": self.round, "block": doc})
        sent_block = Block.from_doc(dict(doc, block_hash=codec.digest_of(doc), quorum_cert=[]))
        if self.behavior == HONEST:
            # An honest proposer judges its own block like any validator
            # and broadcasts the verdict; this keeps honest votes unanimous
            # so one side always reaches quorum within the fault budget.
            ctx.charge(ctx.exec_cost() * sum(len(b.operations) for b in sent_block.tx_list))
            verdict = ACCEPT if self._validate_block(sent_block) else REJECT
            self._cast_own_vote(ctx, sent_block, verdict, broadcast=True)
        else:
            self._cast_own_vote(ctx, sent_block, ACCEPT, broadcast=False)

    def _record_own_vote(self, ctx: NodeContext, block: Block, broadcast: bool) -> None:
        self._cast_own_vote(ctx, block, ACCEPT, broadcast)

    def _cast_own_vote(self, ctx: NodeContext, block: Block, verdict: str, broadcast: bool) -> None:
        block_hash = block.block_hash()
        self.known_blocks[block_hash] = block
        if broadcast:
            auth = codec.authenticate(
                codec.node_key(self.node_id), vote_payload(block.height, block_hash, verdict)
            )
            vote_doc = {
                "voter": self.node_id,
                "height": block.height,
                "block_hash": block_hash,
                "verdict": verdict,
                "authenticator": auth,
            }
            for peer in self._peers():
                ctx.send(peer, "Vote", vote_doc)
        self._tally(ctx, self.node_id, block_hash, verdict)

    def _validate_block(self, block: Block) -> bool:
        """Re-execute every operation; accept only on byte equality."""
        if block.height != self.height:
            return False
        prev = self.ledger[-1].block_hash() if self.ledger else codec.ZERO_DIGEST
        if block.prev_hash != prev:
            return False
        if not block.tx_list:
            return False
        working = self.app_state
        seen_sessions = set()
        for batch in block.tx_list:
            if batch.session_id in self.committed_sessions or batch.session_id in seen_sessions:
                return False
            seen_sessions.add(batch.session_id)
            for op in batch.operations:
                if not op.response.ok:
                    return False
                try:
                    replayed, working = self.registry.execute(op.request, working)
                except RouteNotFoundError:
                    return False
                if codec.canonical_serialize(replayed) != codec.canonical_serialize(op.response):
                    return False
        return True

    def _on_proposal(self, ctx: NodeContext, sender: str, payload: dict) -> None:
        try:
            doc = payload["block"]
            round_no = payload["round"]
            block = Block(
                height=doc["height"],
                prev_hash=doc["prev_hash"],
                tx_list=tuple(BatchTransaction.from_doc(d) for d in doc["tx_list"]),
                proposer_id=doc["proposer_id"],
            )
        except (KeyError, ValueError, TypeError):
            return
        if block.height != self.height:
            return  # stale or future proposal: withhold the vote
        if block.proposer_id != sender or sender != self.proposer_for(block.height, round_no):
            return
        seen_key = (block.height, round_no, sender)
        block_hash = block.block_hash()
        first_seen = self.seen_proposals.get(seen_key)
        if first_seen is not None and first_seen != block_hash:
            self.equivocation_flags.append(
                {"height": block.height, "round": round_no, "proposer": sender}
            )
            return  # conflicting proposal for the same round: keep the first
        self.seen_proposals[seen_key] = block_hash
        self.known_blocks[block_hash] = block
        ctx.charge(ctx.exec_cost() * (1 + sum(len(b.operations) for b in block.tx_list)))
        if self.behavior == WRONG_RESULT:
            verdict = ACCEPT
        else:
            verdict = ACCEPT if self._validate_block(block) else REJECT
        auth = codec.authenticate(
            codec.node_key(self.node_id), vote_payload(block.height, block_hash, verdict)
        )
        vote_doc = {
            "voter": self.node_id,
            "height": block.height,
            "block_hash": block_hash,
            "verdict": verdict,
            "authenticator": auth,
        }
        for peer in self._peers():
            ctx.send(peer, "Vote", vote_doc)
        self._tally(ctx, self.node_id, block_hash, verdict)

    def _on_vote(self, ctx: NodeContext, payload: dict) -> None:
        try:
            voter = payload["voter"]
            height = payload["height"]
            block_hash = payload["block_hash"]
            verdict = payload["verdict"]
            auth = payload["authenticator"]
        except KeyError:
            return
        if height != self.height:
            return
        if voter not in self.cluster:
            return
        if not codec.verify_authenticator(
            codec.node_key(voter), vote_payload(height, block_hash, verdict), auth
        ):
            return
        self._tally(ctx, voter, block_hash, verdict)

    def _tally(self, ctx: NodeContext, voter: str, block_hash: bytes, verdict: str) -> None:
        tally = self.votes.setdefault(block_hash, {})
        if voter in tally:
            return
        tally[voter] = verdict
        accepts = [v for v, verd in tally.items() if verd == ACCEPT]
        rejects = [v for v, verd in tally.items() if verd == REJECT]
        q = quorum(self.n)
        if len(accepts) >= q and block_hash in self.known_blocks:
            self._commit(ctx, self.known_blocks[block_hash], accepts)
        elif len(rejects) >= q and block_hash in self.known_blocks:
            self._handle_rejected_block(ctx, self.known_blocks[block_hash])

    def _cert_for(self, block: Block, accepts) -> tuple:
        payload = vote_payload(block.height, block.block_hash(), ACCEPT)
        cert = []
        for voter in sorted(accepts):
            cert.append((voter, codec.authenticate(codec.node_key(voter), payload)))
        return tuple(cert)

    def _commit(self, ctx: NodeContext, block: Block, accepts) -> None:
        if block.height != self.height:
            return
        sealed = block.with_cert(self._cert_for(block, accepts))
        self._adopt(sealed)
        ctx.charge(ctx.exec_cost())
        # Catch up peers whose accepting vote we have not seen; they may
        # have received an equivocating variant or missed the proposal.
        tally = self.votes.get(block.block_hash(), {})
        notice = {"block": sealed.to_doc()}
        for peer in self._peers():
            if tally.get(peer) != ACCEPT:
                ctx.send(peer, "CommitNotice", notice)
        self._reply_commits(ctx, sealed)
        self.votes.clear()
        self.known_blocks.clear()
        self.seen_proposals.clear()
        if self.mempool:
            self._arm_round_timer(ctx)
            self._maybe_propose(ctx)

    def _adopt(self, block: Block, persist: bool = True) -> None:
        self.ledger.append(block)
        height = block.height
        for batch in block.tx_list:
            for op in batch.operations:
                self.app_state = self.app_state.apply_delta(op.response.state_delta)
            ref = L1Ref(block_height=height, tx_hash=batch.tx_hash())
            self.tx_index[batch.tx_hash()] = (batch, ref)
            self.committed_sessions.add(batch.session_id)
        committed = {b.session_id for b in block.tx_list}
        self.mempool = [b for b in self.mempool if b.session_id not in committed]
        self.round = 0
        if persist and self.store is not None:
            self.store.append(block)

    def _reply_commits(self, ctx: NodeContext, block: Block) -> None:
        for batch in block.tx_list:
            target = self.pending_replies.pop(batch.session_id, None)
            if target is not None:
                ref = self.tx_index[batch.tx_hash()][1]
                ctx.send(target, "CommitResult", {
                    "session_id": batch.session_id,
                    "committed": True,
                    "l1_ref": ref.to_doc(),
                    "reason": None,
                })

    def _handle_rejected_block(self, ctx: NodeContext, block: Block) -> None:
        """A quorum rejected this proposal. Keep batches we judge valid for
        a later round; drop and report the ones we also reject."""
        tally = self.votes.get(block.block_hash(), {})
        for batch in list(self.mempool):
            if batch not in block.tx_list:
                continue
            working = self.app_state
            batch_ok = True
            for op in batch.operations:
                if not op.response.ok:
                    batch_ok = False
                    break
                try:
                    replayed, working = self.registry.execute(op.request, working)
                except RouteNotFoundError:
                    batch_ok = False
                    break
                if codec.canonical_serialize(replayed) != codec.canonical_serialize(op.response):
                    batch_ok = False
                    break
            if batch_ok:
                continue
            self.mempool.remove(batch)
            target = self.pending_replies.pop(batch.session_id, None)
            if target is not None:
                ctx.send(target, "CommitResult", {
                    "session_id": batch.session_id,
                    "committed": False,
                    "l1_ref": None,
                    "reason": "rejected_by_quorum",
                    "tally": {voter: verdict for voter, verdict in sorted(tally.items())},
                })

    def _on_commit_notice(self, ctx: NodeContext, payload: dict) -> None:
        try:
            block = Block.from_doc(payload["block"])
        except (KeyError, ValueError, TypeError, codec.CodecError):
            return
        if block.height != self.height:
            return
        prev = self.ledger[-1].block_hash() if self.ledger else codec.ZERO_DIGEST
        if block.prev_hash != prev:
            return
        if not cert_valid(block, self.n):
            return
        ctx.charge(ctx.exec_cost())
        self._adopt(block)
        self._reply_commits(ctx, block)
        self.votes.clear()
        self.known_blocks.clear()
        self.seen_proposals.clear()
        if self.mempool:
            self._arm_round_timer(ctx)
            self._maybe_propose(ctx)

    def _on_round_timeout(self, ctx: NodeContext, payload: dict) -> None:
        if payload.get("height") != self.height or payload.get("round") != self.round:
            return  # consensus moved on while the timer was in flight
        if not self.mempool:
            return
        self.round += 1
        self._arm_round_timer(ctx)
        self._maybe_propose(ctx)
