"""Acceptance criteria, one test per criterion.

Run with ``pytest tests/test_acceptance.py -v`` for one pass/fail line per
criterion; each test also prints a [PASS] line with its measured numbers
(visible with ``-s`` or on failure).
"""

import random
import time

import pytest

from sessionbft import codec
from sessionbft.bench import run_sweep, to_csv
from sessionbft.chain import BlockStore, verify_chain
from sessionbft.cluster import (
    SimCluster,
    WorkflowClient,
    height_conflicts,
    replay_audit,
    run_workflow,
)
from sessionbft.model import ClusterConfig, LatencyModel, fault_budget, quorum
from sessionbft.registry import sign_package

ANCHOR_MS = 590.2
ANCHOR_TOLERANCE = 0.25

SWEEP_L1 = [4, 7, 10, 13, 16]
SWEEP_L2 = [1, 2]
SWEEP_SEED = 2024
SWEEP_ITERATIONS = 100


def fast_model():
    return LatencyModel(base_delay=1_000, jitter=200, proc_delay=100, exec_delay=100)


def report(name: str, detail: str):
    print(f"[PASS] {name}: {detail}")


@pytest.fixture(scope="module")
def sweep_pair():
    """Two identical full sweeps on the default model (shared across
    the calibration, speedup, monotonicity, and determinism criteria)."""
    kwargs = dict(l1_sizes=SWEEP_L1, l2_sizes=SWEEP_L2,
                  iterations=SWEEP_ITERATIONS, seed=SWEEP_SEED)
    first = run_sweep(**kwargs)
    second = run_sweep(**kwargs)
    return first, second


class TestQuorumSizingTable:
    def test_criterion_quorum_and_fault_budget_tables(self):
        t0 = time.monotonic()
        sizes = [4, 7, 10, 13, 16]
        quorums = [quorum(n) for n in sizes]
        budgets = [fault_budget(n) for n in sizes]
        assert quorums == [3, 5, 7, 9, 11]
        assert budgets == [1, 2, 3, 4, 5]
        report("quorum/sizing table",
               f"quorum={quorums} fault_budget={budgets} in {time.monotonic() - t0:.3f}s")


class TestSafetyUnderFaults:
    def test_criterion_safety_under_f_byzantine_faults(self):
        t0 = time.monotonic()
        runs = 0
        commits = 0
        for n in (4, 7):
            f = fault_budget(n)
            for behavior in ("WrongResult", "Equivocate", "Silent"):
                for run_index in range(50):
                    rng = random.Random(hash((n, behavior)) % 10_000 + run_index)
                    byz_indices = rng.sample(range(1, n), f)
                    behaviors = {f"l1-{i}": behavior for i in byz_indices}
                    config = ClusterConfig(n_l1=n, n_l2=1,
                                           seed=run_index * 13 + n,
                                           latency_model=fast_model())
                    cluster, client = run_workflow(config, iterations=3,
                                                   l1_behaviors=behaviors)
                    assert client.done and not client.failures, (
                        n, behavior, run_index, client.failures[:1])
                    correct = cluster.correct_l1_nodes()
                    assert height_conflicts(correct) == [], (n, behavior, run_index)
                    for node in correct:
                        assert replay_audit(node.ledger) == [], (n, behavior, run_index)
                    commits += len(client.commit_results)
                    runs += 1
        report("safety under f faults",
               f"{runs} runs, {commits} commits, zero conflicts, "
               f"zero replay divergences in {time.monotonic() - t0:.1f}s")


class _InterleaveDriver:
    """Drives several sessions concurrently, committing some and aborting
    others at random points, with lane order chosen by a seeded RNG."""

    STAGE_ROUTES = ("/sessions/{id}/scan", "/sessions/{id}/validate",
                    "/sessions/{id}/quality-check", "/sessions/{id}/label")

    def __init__(self, rng: random.Random, lanes: int = 3):
        self.rng = rng
        self.nonce = 0
        self.lanes = []
        for lane in range(lanes):
            if lane == 0:
                outcome = "commit"
            elif lane == 1:
                outcome = "abort"
            else:
                outcome = rng.choice(["commit", "abort"])
            steps = ["/packages", "/sessions"]
            if outcome == "commit":
                steps += list(self.STAGE_ROUTES) + ["/sessions/{id}/commit"]
            else:
                steps += list(self.STAGE_ROUTES[: rng.randrange(0, 5)])
                steps += ["/sessions/{id}/abort"]
            self.lanes.append({
                "package_id": f"PKG-{lane}",
                "session_id": None,
                "steps": steps,
                "at": 0,
                "outcome": outcome,
                "failed": None,
            })

    def attach(self, cluster):
        cluster.net.add_node("client-0", self, proc_delay=0)
        cluster.net.at(0, lambda net: self._fire(
            lambda dst, kind, payload: net.send("client-0", dst, kind, payload)))

    def _next_lane(self):
        open_lanes = [lane for lane in self.lanes if lane["at"] < len(lane["steps"])]
        return self.rng.choice(open_lanes) if open_lanes else None

    def _fire(self, send):
        lane = self._next_lane()
        if lane is None:
            return
        route = lane["steps"][lane["at"]]
        self.nonce += 1
        body = {}
        if route == "/packages":
            contents = ["item"]
            body = {"package_id": lane["package_id"], "expected_contents": contents,
                    "origin_signature": sign_package(lane["package_id"], contents)}
        elif route == "/sessions":
            body = {"package_id": lane["package_id"]}
        payload = {
            "route": route, "body": body, "client_id": "client",
            "session_id": lane["session_id"], "nonce": self.nonce,
            "request_id": f"{id(lane)}:{lane['at']}",
        }
        self._inflight = lane
        send("l2-0", "ClientRequest", payload)

    def on_message(self, ctx, sender, kind, payload):
        if kind != "ClientResponse":
            return
        lane = self._inflight
        response = payload["response"]
        if response["status"] != "OK":
            lane["failed"] = response
            lane["at"] = len(lane["steps"])
        else:
            if lane["steps"][lane["at"]] == "/sessions":
                lane["session_id"] = payload["session_id"]
            lane["at"] += 1
        self._fire(ctx.send)


class TestAtomicSessionCommitment:
    EXPECTED_ROUTES = ["/sessions", "/sessions/{id}/scan", "/sessions/{id}/validate",
                       "/sessions/{id}/quality-check", "/sessions/{id}/label"]

    def test_criterion_atomic_commitment_under_interleaved_aborts(self):
        t0 = time.monotonic()
        committed_total = aborted_total = 0
        for run_index in range(100):
            rng = random.Random(5000 + run_index)
            config = ClusterConfig(n_l1=4, n_l2=1, seed=run_index,
                                   latency_model=fast_model())
            cluster = SimCluster(config)
            driver = _InterleaveDriver(rng)
            driver.attach(cluster)
            cluster.run()
            committed = {lane["session_id"] for lane in driver.lanes
                         if lane["outcome"] == "commit"}
            aborted = {lane["session_id"] for lane in driver.lanes
                       if lane["outcome"] == "abort"}
            assert all(lane["failed"] is None for lane in driver.lanes), (
                run_index, [lane["failed"] for lane in driver.lanes])
            for node in cluster.l1_nodes.values():
                seen: dict[str, int] = {}
                for block in node.ledger:
                    for batch in block.tx_list:
                        seen[batch.session_id] = seen.get(batch.session_id, 0) + 1
                        routes = [op.request.route for op in batch.operations]
                        assert routes == self.EXPECTED_ROUTES, (run_index, routes)
                assert set(seen) == committed, (run_index, seen, committed)
                assert all(count == 1 for count in seen.values()), (run_index, seen)
                assert not (set(seen) & aborted), (run_index, seen, aborted)
            committed_total += len(committed)
            aborted_total += len(aborted)
        assert committed_total > 0 and aborted_total > 0
        report("atomic session commitment",
               f"100 runs, {committed_total} committed / {aborted_total} aborted sessions, "
               f"all exact in {time.monotonic() - t0:.1f}s")


class TestByzantineL2Detection:
    def test_criterion_wrong_result_peer_fully_rejected(self):
        t0 = time.monotonic()
        attempts = 30
        config = ClusterConfig(n_l1=4, n_l2=2, seed=77, latency_model=fast_model())
        cluster = SimCluster(config, l2_behaviors={"l2-1": "WrongResult"})
        rejected = []

        class Prober:
            def __init__(self):
                self.count = 0

            def send_next(self, send):
                if self.count >= attempts:
                    return
                self.count += 1
                package_id = f"PKG-{self.count}"
                send("l2-0", "ClientRequest", {
                    "route": "/packages",
                    "body": {"package_id": package_id, "expected_contents": ["x"],
                             "origin_signature": sign_package(package_id, ["x"])},
                    "client_id": "client", "session_id": None,
                    "nonce": self.count, "request_id": str(self.count),
                })

            def on_message(self, ctx, sender, kind, payload):
                if kind == "ClientResponse":
                    rejected.append(payload["response"])
                    self.send_next(ctx.send)

        prober = Prober()
        cluster.net.add_node("client-0", prober, proc_delay=0)
        cluster.net.at(0, lambda net: prober.send_next(
            lambda dst, kind, payload: net.send("client-0", dst, kind, payload)))
        cluster.run()
        assert len(rejected) == attempts
        assert all(r["status"] == "REJECTED" for r in rejected)
        assert all(r["body"]["reason"] == "consensus_divergence" for r in rejected)
        assert cluster.entry_node.app_state.entries == {}
        assert all(n.height == 0 for n in cluster.l1_nodes.values())
        report("byzantine L2 detection",
               f"{attempts}/{attempts} tampered operations rejected, originator "
               f"state empty in {time.monotonic() - t0:.1f}s")


class TestLatencyCalibrationAnchor:
    def test_criterion_total_workflow_within_25pct_of_anchor(self, sweep_pair):
        first, _ = sweep_pair
        anchor_report = next(r for r in first if r.config_label == "4-1")
        low = ANCHOR_MS * (1 - ANCHOR_TOLERANCE)
        high = ANCHOR_MS * (1 + ANCHOR_TOLERANCE)
        assert low <= anchor_report.total_workflow_ms <= high, anchor_report.total_workflow_ms
        report("latency calibration anchor",
               f"4-1 total {anchor_report.total_workflow_ms:.1f} ms within "
               f"[{low:.1f}, {high:.1f}] around {ANCHOR_MS}")


class TestSpeedupDirection:
    def test_criterion_speedup_windows_and_single_over_dual(self, sweep_pair):
        first, _ = sweep_pair
        by_label = {r.config_label: r for r in first}
        singles = {n: by_label[f"{n}-1"].speedup for n in SWEEP_L1}
        duals = {n: by_label[f"{n}-2"].speedup for n in SWEEP_L1}
        for n in SWEEP_L1:
            assert 2.0 <= singles[n] <= 5.0, (n, singles[n])
            assert 1.0 <= duals[n] <= 1.5, (n, duals[n])
            assert singles[n] > duals[n], (n, singles[n], duals[n])
        report("speedup direction",
               f"single {min(singles.values()):.2f}-{max(singles.values()):.2f}x in [2,5]; "
               f"dual {min(duals.values()):.2f}-{max(duals.values()):.2f}x in [1,1.5]; "
               f"single > dual at every size")


class TestScalingMonotonicity:
    def test_criterion_commit_latency_monotone_in_cluster_size(self, sweep_pair):
        first, _ = sweep_pair
        by_label = {r.config_label: r for r in first}
        for n_l2 in SWEEP_L2:
            series = [by_label[f"{n}-{n_l2}"].l1_mean_ms for n in SWEEP_L1]
            assert all(a <= b for a, b in zip(series, series[1:])), (n_l2, series)
        report("scaling monotonicity",
               "commit mean non-decreasing over n_l1=4..16 for both layer-2 sizes")


class TestDeterminism:
    def test_criterion_identical_sweeps_bit_identical(self, sweep_pair):
        first, second = sweep_pair
        assert to_csv(first) == to_csv(second)
        digests_a = [r.trace_digest for r in first]
        digests_b = [r.trace_digest for r in second]
        assert digests_a == digests_b
        report("determinism",
               f"two {len(first)}-config sweeps: CSV bit-identical, "
               f"{len(digests_a)} trace digests identical")


class TestLedgerIntegrity:
    def test_criterion_verify_chain_and_mutation_detection(self, tmp_path):
        t0 = time.monotonic()
        config = ClusterConfig(n_l1=4, n_l2=1, seed=31, latency_model=fast_model())
        cluster, client = run_workflow(config, iterations=5)
        assert client.done and not client.failures
        for node in cluster.l1_nodes.values():
            assert verify_chain(node.ledger, node.n) is True
        path = tmp_path / "ledger.bin"
        store = BlockStore(str(path))
        for block in cluster.l1_nodes["l1-0"].ledger:
            store.append(block)
        pristine = path.read_bytes()
        assert verify_chain(store.load(), 4) is True
        rng = random.Random(424242)
        detected = 0
        for _ in range(100):
            data = bytearray(pristine)
            index = rng.randrange(len(data))
            data[index] ^= 1 << rng.randrange(8)
            path.write_bytes(bytes(data))
            try:
                mutated = store.load()
            except ValueError:
                detected += 1
                continue
            assert verify_chain(mutated, 4) is False
            detected += 1
        assert detected == 100
        report("ledger integrity",
               f"5-block chains verify on all nodes; 100/100 single-byte "
               f"mutations detected in {time.monotonic() - t0:.1f}s")
