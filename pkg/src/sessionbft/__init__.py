"""Two-layer Byzantine fault-tolerant web services.

An interactive session-buffering layer answers clients immediately after
cross-validated execution; completed sessions commit atomically to a
quorum consensus layer with a hash-chained ledger. Ships with a
deterministic cluster simulator, a latency benchmark harness, and an HTTP
gateway for driving a live in-process cluster.
"""

from .chain import Block, L1Ref, verify_chain
from .codec import CodecError, canonical_serialize, decode, digest
from .model import (
    BatchTransaction,
    ClusterConfig,
    ConfigError,
    LatencyModel,
    ServiceRequest,
    ServiceResponse,
    Transaction,
    fault_budget,
    quorum,
)

__version__ = "0.1.0"

__all__ = [
    "BatchTransaction",
    "Block",
    "ClusterConfig",
    "CodecError",
    "ConfigError",
    "L1Ref",
    "LatencyModel",
    "ServiceRequest",
    "ServiceResponse",
    "Transaction",
    "canonical_serialize",
    "decode",
    "digest",
    "fault_budget",
    "quorum",
    "verify_chain",
]
