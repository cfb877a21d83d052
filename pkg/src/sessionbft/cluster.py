"""Cluster assembly and the scripted workflow client.

Builds a complete simulated deployment (consensus nodes, interactive
nodes, seeded transport) from one config, and provides the driver that
walks the package workflow end to end while recording per-endpoint
latency samples. Audit helpers replay finished ledgers independently of
the consensus path that produced them.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from . import codec
from .chain import BlockStore, verify_chain
from .l1 import HONEST, L1Node
from .l2 import ROUTE_COMMIT, L2Node
from .model import ClusterConfig, L2_LINK_FACTOR, LatencyModel
from .registry import (
    ROUTE_CREATE_PACKAGE,
    ROUTE_LABEL,
    ROUTE_QUALITY_CHECK,
    ROUTE_SCAN,
    ROUTE_START_SESSION,
    ROUTE_VALIDATE,
    AppState,
    Registry,
    build_registry,
    sign_package,
)
from .simnet import NodeContext, VirtualNet


def _with_l2_links(model: LatencyModel, l2_ids: list[str]) -> LatencyModel:
    overrides = list(model.per_link_overrides)
    explicit = {(a, b) for a, b, _ in overrides}
    peer_delay = int(model.base_delay * L2_LINK_FACTOR)
    for a in l2_ids:
        for b in l2_ids:
            if a != b and (a, b) not in explicit:
                overrides.append((a, b, peer_delay))
    return LatencyModel(
        base_delay=model.base_delay,
        jitter=model.jitter,
        proc_delay=model.proc_delay,
        exec_delay=model.exec_delay,
        per_link_overrides=tuple(overrides),
    )


class SimCluster:
    """A fully wired simulated deployment under one virtual network."""

    def __init__(
        self,
        config: ClusterConfig,
        l1_behaviors: dict[str, str] | None = None,
        l2_behaviors: dict[str, str] | None = None,
        persist_dir: str | None = None,
    ):
        self.config = config
        l1_ids = config.l1_ids()
        l2_ids = config.l2_ids()
        self.net = VirtualNet(_with_l2_links(config.latency_model, l2_ids), seed=config.seed)
        self.l1_nodes: dict[str, L1Node] = {}
        self.l2_nodes: dict[str, L2Node] = {}
        l1_behaviors = l1_behaviors or {}
        l2_behaviors = l2_behaviors or {}
        for node_id in l1_ids:
            store = None
            if persist_dir is not None:
                store = BlockStore(os.path.join(persist_dir, f"{node_id}.ledger"))
            node = L1Node(
                node_id=node_id,
                cluster=l1_ids,
                registry=build_registry(),
                behavior=l1_behaviors.get(node_id, HONEST),
                store=store,
            )
            self.l1_nodes[node_id] = node
            self.net.add_node(node_id, node)
        for i, node_id in enumerate(l2_ids):
            contact = l1_ids[i % len(l1_ids)]
            node = L2Node(
                node_id=node_id,
                peers=[p for p in l2_ids if p != node_id],
                registry=build_registry(),
                contact_l1=contact,
                l1_lookup=self.l1_nodes[contact],
                behavior=l2_behaviors.get(node_id, HONEST),
            )
            self.l2_nodes[node_id] = node
            self.net.add_node(node_id, node)

    @property
    def entry_node(self) -> L2Node:
        return self.l2_nodes[self.config.l2_ids()[0]]

    def correct_l1_nodes(self) -> list[L1Node]:
        return [n for n in self.l1_nodes.values() if n.behavior == HONEST]

    def correct_l2_nodes(self) -> list[L2Node]:
        return [n for n in self.l2_nodes.values() if n.behavior == HONEST]

    def run(self, max_virtual_time: int | None = None):
        return self.net.run_until_quiescent(max_virtual_time)


# -- independent audits -------------------------------------------------------


def replay_audit(ledger, registry: Registry | None = None) -> list[str]:
    """Re-execute every committed operation from genesis and report any
    divergence from the embedded responses. Empty result means the ledger
    withstands honest replay."""
    registry = registry or build_registry()
    problems = []
    state = AppState()
    for block in ledger:
        for batch in block.tx_list:
            for i, op in enumerate(batch.operations):
                try:
                    response, state = registry.execute(op.request, state)
                except Exception as exc:  # noqa: BLE001 - audit must not abort
                    problems.append(
                        f"block {block.height} session {batch.session_id} op {i}: {exc!r}"
                    )
                    continue
                if codec.canonical_serialize(response) != codec.canonical_serialize(op.response):
                    problems.append(
                        f"block {block.height} session {batch.session_id} op {i}: response mismatch"
                    )
    return problems


def height_conflicts(nodes: list[L1Node]) -> list[tuple[int, str, str]]:
    """Pairs of correct nodes that committed different blocks at one height."""
    conflicts = []
    for i, a in enumerate(nodes):
        for b in nodes[i + 1 :]:
            for h in range(min(len(a.ledger), len(b.ledger))):
                if a.ledger[h].block_hash() != b.ledger[h].block_hash():
                    conflicts.append((h, a.node_id, b.node_id))
    return conflicts


def chain_reports(cluster: SimCluster) -> dict[str, bool]:
    return {
        node_id: verify_chain(node.ledger, node.n)
        for node_id, node in cluster.l1_nodes.items()
        if node.behavior == HONEST
    }


# -- workflow driver -----------------------------------------------------------

WORKFLOW_ENDPOINTS = (
    "create_package",
    "start_session",
    "scan_package",
    "validate_package",
    "quality_check",
    "label_package",
    "commit",
)

_ENDPOINT_ROUTES = {
    "create_package": ROUTE_CREATE_PACKAGE,
    "start_session": ROUTE_START_SESSION,
    "scan_package": ROUTE_SCAN,
    "validate_package": ROUTE_VALIDATE,
    "quality_check": ROUTE_QUALITY_CHECK,
    "label_package": ROUTE_LABEL,
    "commit": ROUTE_COMMIT,
}

DEFAULT_CONTENTS = ["widget-a", "widget-b", "manual"]


@dataclass
class LatencySample:
    endpoint: str
    t_req: int
    t_res: int
    config: str
    iteration: int

    @property
    def latency(self) -> int:
        return self.t_res - self.t_req

    def to_doc(self) -> dict:
        return {
            "endpoint": self.endpoint,
            "t_req": self.t_req,
            "t_res": self.t_res,
            "config": self.config,
            "iteration": self.iteration,
        }

    @staticmethod
    def from_doc(doc: dict) -> "LatencySample":
        return LatencySample(**doc)


class WorkflowError(RuntimeError):
    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class WorkflowClient:
    """Scripted client walking create -> ... -> label -> commit repeatedly.

    Registered with a zero dequeue cost so measured latencies contain only
    network hops and server-side work; consecutive steps chain with zero
    think time, which makes the per-iteration endpoint latencies add up
    exactly to the iteration's total.
    """

    def __init__(
        self,
        client_id: str,
        target: str,
        iterations: int,
        config_label: str,
        package_prefix: str = "PKG",
    ):
        self.client_id = client_id
        self.target = target
        self.iterations = iterations
        self.config_label = config_label
        self.package_prefix = package_prefix
        self.samples: list[LatencySample] = []
        self.failures: list[dict] = []
        self.iteration = 0
        self.step = 0
        self.nonce = 0
        self.session_id: str | None = None
        self.commit_results: list[dict] = []
        self.done = False

    def attach(self, cluster: SimCluster) -> None:
        cluster.net.add_node(self.client_id, self, proc_delay=0)
        cluster.net.at(0, lambda net: self._send_step(net, 0))

    # -- stepping ---------------------------------------------------------

    def _request_payload(self, endpoint: str) -> dict:
        self.nonce += 1
        body: dict = {}
        session_id = None
        if endpoint == "create_package":
            package_id = f"{self.package_prefix}-{self.iteration}"
            body = {
                "package_id": package_id,
                "expected_contents": list(DEFAULT_CONTENTS),
                "origin_signature": sign_package(package_id, DEFAULT_CONTENTS),
            }
        elif endpoint == "start_session":
            body = {"package_id": f"{self.package_prefix}-{self.iteration}"}
        else:
            session_id = self.session_id
        return {
            "route": _ENDPOINT_ROUTES[endpoint],
            "body": body,
            "client_id": self.client_id,
            "session_id": session_id,
            "nonce": self.nonce,
            "request_id": f"{self.iteration}:{self.step}",
        }

    def _send_step(self, net: VirtualNet, _step: int) -> None:
        endpoint = WORKFLOW_ENDPOINTS[self.step]
        payload = self._request_payload(endpoint)
        self._t_req = net.now
        net.send(self.client_id, self.target, "ClientRequest", payload)

    def on_message(self, ctx: NodeContext, sender: str, kind: str, payload: dict) -> None:
        if kind != "ClientResponse":
            return
        endpoint = WORKFLOW_ENDPOINTS[self.step]
        response = payload.get("response", {})
        self.samples.append(
            LatencySample(
                endpoint=endpoint,
                t_req=self._t_req,
                t_res=ctx.now,
                config=self.config_label,
                iteration=self.iteration,
            )
        )
        if response.get("status") != "OK":
            self.failures.append({"endpoint": endpoint, "iteration": self.iteration, "response": response})
            self.done = True
            return
        if endpoint == "start_session":
            self.session_id = payload.get("session_id")
        if endpoint == "commit":
            self.commit_results.append(response.get("body", {}))
        self.step += 1
        if self.step >= len(WORKFLOW_ENDPOINTS):
            self.step = 0
            self.iteration += 1
            self.session_id = None
            if self.iteration >= self.iterations:
                self.done = True
                return
        # Chain the next request immediately: zero client think time.
        endpoint = WORKFLOW_ENDPOINTS[self.step]
        out = self._request_payload(endpoint)
        self._t_req = ctx.now
        ctx.send(self.target, "ClientRequest", out)


def run_workflow(
    config: ClusterConfig,
    iterations: int = 1,
    l1_behaviors: dict[str, str] | None = None,
    l2_behaviors: dict[str, str] | None = None,
    max_virtual_time: int | None = None,
    persist_dir: str | None = None,
) -> tuple[SimCluster, WorkflowClient]:
    """Run the full workflow for N iterations on a fresh cluster."""
    cluster = SimCluster(
        config, l1_behaviors=l1_behaviors, l2_behaviors=l2_behaviors, persist_dir=persist_dir
    )
    client = WorkflowClient(
        client_id="client-0",
        target=cluster.config.l2_ids()[0],
        iterations=iterations,
        config_label=config.label,
    )
    client.attach(cluster)
    cluster.run(max_virtual_time)
    return cluster, client
