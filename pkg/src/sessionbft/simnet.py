"""Deterministic discrete-event network and virtual clock.

All simulated nodes interact only through this transport. Time is integer
microseconds; every delay comes from the latency model plus a seeded RNG,
so a (config, scenario, seed) triple always replays to the identical event
sequence and trace.

Each registered node is a serializable event loop: deliveries queue up and
are processed one at a time, each charging a per-message dequeue cost plus
whatever work the handler reports. That serialization is what makes vote
fan-in at a consensus node scale with cluster size instead of being free.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field

from . import codec
from .model import LatencyModel


class RoutingError(KeyError):
    """Message addressed to an unregistered endpoint."""


DELIVERED = "Delivered"
DROPPED = "Dropped"


@dataclass(frozen=True)
class TraceEvent:
    virtual_time: int
    seq: int
    src: str
    dst: str
    kind: str
    payload_digest: str
    status: str

    def to_doc(self) -> dict:
        return {
            "virtual_time": self.virtual_time,
            "seq": self.seq,
            "src": self.src,
            "dst": self.dst,
            "kind": self.kind,
            "payload_digest": self.payload_digest,
            "status": self.status,
        }


@dataclass
class Trace:
    events: list = field(default_factory=list)
    truncated: bool = False

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_doc(), sort_keys=True) + "\n" for e in self.events)

    def digest(self) -> str:
        doc = {"events": [e.to_doc() for e in self.events], "truncated": self.truncated}
        return codec.digest_of(doc).hex()

    def count(self, kind: str, status: str = DELIVERED) -> int:
        return sum(1 for e in self.events if e.kind == kind and e.status == status)


class NodeContext:
    """Handed to a node while it processes one delivery."""

    def __init__(self, net: "VirtualNet", node_id: str, now: int):
        self.net = net
        self.node_id = node_id
        self.now = now
        self.charged = 0
        self.outgoing: list[tuple[str, str, dict]] = []
        self.timers: list[tuple[int, str, dict]] = []

    def charge(self, micros: int) -> None:
        """Account processing work; delays this node's next dequeue."""
        self.charged += micros

    def send(self, dst: str, kind: str, payload: dict) -> None:
        self.outgoing.append((dst, kind, payload))

    def set_timer(self, delay: int, kind: str, payload: dict) -> None:
        self.timers.append((delay, kind, payload))

    def exec_cost(self) -> int:
        return self.net.model.exec_delay


class VirtualNet:
    """Seeded event-queue transport connecting simulated nodes."""

    def __init__(self, model: LatencyModel | None = None, seed: int = 0):
        self.model = model or LatencyModel()
        self.rng = random.Random(seed)
        self.now = 0
        self._seq = 0
        self._queue: list = []  # (time, seq, entry)
        self._nodes: dict[str, object] = {}
        self._proc: dict[str, int] = {}
        self._busy: dict[str, int] = {}
        self._drop_rates: dict[tuple[str, str], float] = {}
        self._partition: list[frozenset] | None = None
        self.trace = Trace()

    # -- topology -------------------------------------------------------

    def add_node(self, node_id: str, node, proc_delay: int | None = None) -> None:
        if node_id in self._nodes:
            raise ValueError(f"endpoint already registered: {node_id}")
        self._nodes[node_id] = node
        self._proc[node_id] = self.model.proc_delay if proc_delay is None else proc_delay
        self._busy[node_id] = 0

    def set_drop_rate(self, src: str, dst: str, rate: float) -> None:
        self._drop_rates[(src, dst)] = rate

    def partition(self, groups) -> None:
        """Drop all messages between nodes in different groups."""
        self._partition = [frozenset(g) for g in groups]

    def heal(self) -> None:
        self._partition = None

    def _severed(self, src: str, dst: str) -> bool:
        if self._partition is None:
            return False
        for group in self._partition:
            if src in group:
                return dst not in group
        return True  # src outside every group is isolated

    # -- scheduling -----------------------------------------------------

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _push(self, at: int, entry) -> None:
        heapq.heappush(self._queue, (at, self._next_seq(), entry))

    def send(self, src: str, dst: str, kind: str, payload: dict, at: int | None = None) -> None:
        """Route one message; delivery or drop is decided now and traced."""
        if dst not in self._nodes:
            raise RoutingError(dst)
        if src not in self._nodes:
            raise RoutingError(src)
        departure = self.now if at is None else at
        delay = self.model.link_delay(src, dst)
        if self.model.jitter > 0:
            delay += self.rng.randint(0, self.model.jitter)
        arrival = departure + delay
        dropped = self._severed(src, dst)
        if not dropped:
            rate = self._drop_rates.get((src, dst), 0.0)
            if rate >= 1.0:
                dropped = True
            elif rate > 0.0:
                dropped = self.rng.random() < rate
        status = DROPPED if dropped else DELIVERED
        event = TraceEvent(
            virtual_time=arrival,
            seq=self._next_seq(),
            src=src,
            dst=dst,
            kind=kind,
            payload_digest=codec.digest_of(payload).hex(),
            status=status,
        )
        self.trace.events.append(event)
        if not dropped:
            self._push(arrival, ("msg", src, dst, kind, payload))

    def _schedule_timer(self, node_id: str, at: int, kind: str, payload: dict) -> None:
        self._push(at, ("timer", node_id, node_id, kind, payload))

    def at(self, when: int, action) -> None:
        """Run a control callback at a virtual time (scenario injection)."""
        self._push(when, ("control", action))

    # -- execution ------------------------------------------------------

    def pending(self) -> bool:
        return bool(self._queue)

    def peek_time(self) -> int | None:
        return self._queue[0][0] if self._queue else None

    def step(self) -> int | None:
        """Process exactly one pending event; returns its virtual time."""
        if not self._queue:
            return None
        at, _seq, entry = heapq.heappop(self._queue)
        self.now = at
        if entry[0] == "control":
            entry[1](self)
            return at
        _tag, src, dst, kind, payload = entry
        node = self._nodes[dst]
        start = max(at, self._busy[dst])
        ctx = NodeContext(self, dst, start)
        node.on_message(ctx, src, kind, payload)
        end = start + self._proc[dst] + ctx.charged
        self._busy[dst] = end
        for out_dst, out_kind, out_payload in ctx.outgoing:
            self.send(dst, out_dst, out_kind, out_payload, at=end)
        for delay, t_kind, t_payload in ctx.timers:
            self._schedule_timer(dst, end + delay, t_kind, t_payload)
        return at

    def run_until_quiescent(self, max_virtual_time: int | None = None) -> Trace:
        while self._queue:
            if max_virtual_time is not None and self._queue[0][0] > max_virtual_time:
                self.trace.truncated = True
                break
            self.step()
        return self.trace


# -- scenario scripts --------------------------------------------------------
#
# A scenario is a declarative list of {"at": t, "kind": ..., ...} entries.
# Supported kinds:
#   client_request : {"node", "route", "body", "client_id", "session_id"}
#   partition      : {"groups": [[ids...], ...]}
#   heal           : {}
#   drop_rate      : {"src", "dst", "rate"}
#   set_behavior   : {"node", "behavior"}


def install_scenario(net: VirtualNet, actions, request_sender: str = "scenario") -> None:
    for action in sorted(actions, key=lambda a: a["at"]):
        net.at(action["at"], _make_action(action, request_sender))


def _make_action(action: dict, request_sender: str):
    kind = action["kind"]
    if kind == "client_request":
        def fire(net: VirtualNet, action=action):
            payload = {
                "route": action["route"],
                "body": action.get("body", {}),
                "client_id": action.get("client_id", request_sender),
                "session_id": action.get("session_id"),
                "nonce": action.get("nonce", 0),
            }
            net.send(request_sender, action["node"], "ClientRequest", payload)
        return fire
    if kind == "partition":
        return lambda net, groups=action["groups"]: net.partition(groups)
    if kind == "heal":
        return lambda net: net.heal()
    if kind == "drop_rate":
        return lambda net, a=action: net.set_drop_rate(a["src"], a["dst"], a["rate"])
    if kind == "set_behavior":
        def set_behavior(net: VirtualNet, a=action):
            net._nodes[a["node"]].behavior = a["behavior"]
        return set_behavior
    raise ValueError(f"unknown scenario action kind: {kind}")


class Collector:
    """Passive endpoint that records everything delivered to it."""

    def __init__(self):
        self.received: list[tuple[int, str, str, dict]] = []

    def on_message(self, ctx: NodeContext, sender: str, kind: str, payload: dict) -> None:
        self.received.append((ctx.now, sender, kind, payload))
