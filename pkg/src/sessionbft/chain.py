"""Hash-chained block ledger.

Blocks link by digest: each block's hash covers its height, the previous
block's hash, the batch payload, and the proposer, so any byte of history
that changes breaks the chain. The quorum certificate is the set of
accepting votes that justified the commit.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from . import codec
from .model import BatchTransaction, quorum


@dataclass(frozen=True)
class L1Ref:
    """Where a committed batch lives: block height plus batch hash."""

    block_height: int
    tx_hash: bytes

    def to_doc(self) -> dict:
        return {"block_height": self.block_height, "tx_hash": self.tx_hash}

    @staticmethod
    def from_doc(doc: dict) -> "L1Ref":
        return L1Ref(block_height=doc["block_height"], tx_hash=doc["tx_hash"])

    def to_json_doc(self) -> dict:
        return {"block_height": self.block_height, "tx_hash": self.tx_hash.hex()}


@dataclass(frozen=True)
class Block:
    """One committed batch container.

    ``quorum_cert`` holds ``(voter_id, authenticator)`` pairs, sorted by
    voter id so the block has a single canonical form.
    """

    height: int
    prev_hash: bytes
    tx_list: tuple
    proposer_id: str
    quorum_cert: tuple = ()

    def header_doc(self) -> dict:
        return {
            "height": self.height,
            "prev_hash": self.prev_hash,
            "tx_list": [tx.to_doc() for tx in self.tx_list],
            "proposer_id": self.proposer_id,
        }

    def block_hash(self) -> bytes:
        return codec.digest_of(self.header_doc())

    def with_cert(self, cert) -> "Block":
        ordered = tuple(sorted(cert, key=lambda pair: pair[0]))
        return Block(self.height, self.prev_hash, self.tx_list, self.proposer_id, ordered)

    def to_doc(self) -> dict:
        return {
            "height": self.height,
            "prev_hash": self.prev_hash,
            "tx_list": [tx.to_doc() for tx in self.tx_list],
            "proposer_id": self.proposer_id,
            "block_hash": self.block_hash(),
            "quorum_cert": [[voter, tag] for voter, tag in self.quorum_cert],
        }

    @staticmethod
    def from_doc(doc: dict) -> "Block":
        block = Block(
            height=doc["height"],
            prev_hash=doc["prev_hash"],
            tx_list=tuple(BatchTransaction.from_doc(d) for d in doc["tx_list"]),
            proposer_id=doc["proposer_id"],
            quorum_cert=tuple((voter, tag) for voter, tag in doc["quorum_cert"]),
        )
        if doc["block_hash"] != block.block_hash():
            raise codec.CodecError("stored block_hash does not match content")
        return block


def vote_payload(height: int, block_hash: bytes, verdict: str) -> bytes:
    return codec.canonical_serialize(
        {"height": height, "block_hash": block_hash, "verdict": verdict}
    )


def cert_valid(block: Block, n_nodes: int | None = None) -> bool:
    """Check the quorum certificate: distinct voters, valid authenticators,
    and (when the cluster size is known) at least quorum(n) of them."""
    voters = [voter for voter, _ in block.quorum_cert]
    if len(set(voters)) != len(voters):
        return False
    payload = vote_payload(block.height, block.block_hash(), "ACCEPT")
    for voter, tag in block.quorum_cert:
        if not codec.verify_authenticator(codec.node_key(voter), payload, tag):
            return False
    if n_nodes is not None and len(voters) < quorum(n_nodes):
        return False
    return True


def verify_chain(ledger, n_nodes: int | None = None) -> bool:
    """True iff the ledger is a well-linked chain of internally consistent
    blocks starting at height 0 with an all-zero previous hash."""
    prev = codec.ZERO_DIGEST
    for height, block in enumerate(ledger):
        if block.height != height:
            return False
        if block.prev_hash != prev:
            return False
        if not block.tx_list:
            return False
        if not cert_valid(block, n_nodes):
            return False
        prev = block.block_hash()
    return True


class BlockStore:
    """Append-only ledger persistence: length-prefixed canonical block
    records in one file per node, replayable at startup."""

    def __init__(self, path: str):
        self.path = path

    def append(self, block: Block) -> None:
        record = codec.canonical_serialize(block.to_doc())
        with open(self.path, "ab") as fh:
            fh.write(len(record).to_bytes(4, "big"))
            fh.write(record)

    def load(self) -> list[Block]:
        if not os.path.exists(self.path):
            return []
        blocks = []
        with open(self.path, "rb") as fh:
            data = fh.read()
        pos = 0
        while pos < len(data):
            if pos + 4 > len(data):
                raise codec.CodecError("truncated record length")
            size = int.from_bytes(data[pos : pos + 4], "big")
            pos += 4
            if pos + size > len(data):
                raise codec.CodecError("truncated block record")
            try:
                blocks.append(Block.from_doc(codec.decode(data[pos : pos + size])))
            except codec.CodecError:
                raise
            except (KeyError, TypeError, ValueError, AttributeError) as exc:
                raise codec.CodecError(f"malformed block record: {exc!r}") from exc
            pos += size
        return blocks
