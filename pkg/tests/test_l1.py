"""Consensus layer: quorum rules, proposal validation, commit safety."""

import pytest

from sessionbft import codec
from sessionbft.chain import verify_chain
from sessionbft.l1 import L1Node, submit_authenticator
from sessionbft.model import (
    BatchTransaction,
    ClusterConfig,
    ConfigError,
    LatencyModel,
    ServiceRequest,
    Transaction,
    fault_budget,
    quorum,
)
from sessionbft.registry import AppState, build_registry
from sessionbft.simnet import Collector, VirtualNet

from conftest import drive_to_stage


class TestQuorumSizing:
    @pytest.mark.parametrize("n,expected", [(4, 3), (7, 5), (10, 7), (13, 9), (16, 11)])
    def test_quorum_table(self, n, expected):
        assert quorum(n) == expected

    @pytest.mark.parametrize("n,expected", [(4, 1), (7, 2), (10, 3), (13, 4), (16, 5)])
    def test_fault_budget_table(self, n, expected):
        assert fault_budget(n) == expected

    def test_small_cluster_rejected(self):
        with pytest.raises(ConfigError):
            quorum(3)
        with pytest.raises(ConfigError):
            fault_budget(2)
        with pytest.raises(ConfigError):
            ClusterConfig(n_l1=3)

    def test_proposer_rotation_is_round_robin(self):
        registry = build_registry()
        cluster = [f"l1-{i}" for i in range(4)]
        node = L1Node("l1-0", cluster, registry)
        assert node.proposer_for(0, 0) == "l1-0"
        assert node.proposer_for(1, 0) == "l1-1"
        assert node.proposer_for(1, 1) == "l1-2"
        assert node.proposer_for(3, 2) == "l1-1"


def build_valid_batch(session_id="S-1", package_id="PKG-1"):
    """A batch whose operations replay cleanly from an empty replica."""
    registry = build_registry()
    state = AppState()
    operations = []
    final = drive_to_stage(registry, state, session_id=session_id, package_id=package_id,
                           upto="Labeled")
    # Recreate the five session-scoped transactions by replaying the route
    # sequence; the session-start descriptor makes them replica-independent.
    pkg = final.get(f"package:{package_id}")
    descriptor = {k: pkg[k] for k in ("package_id", "expected_contents", "origin_signature", "supplier_id")}
    working = AppState()
    requests = [
        ServiceRequest(route="/sessions", body={"package_id": package_id, "package": descriptor},
                       session_id=session_id, nonce=2),
        ServiceRequest(route="/sessions/{id}/scan", body={}, session_id=session_id, nonce=3),
        ServiceRequest(route="/sessions/{id}/validate", body={}, session_id=session_id, nonce=4),
        ServiceRequest(route="/sessions/{id}/quality-check", body={}, session_id=session_id, nonce=5),
        ServiceRequest(route="/sessions/{id}/label", body={}, session_id=session_id, nonce=6),
    ]
    for request in requests:
        response, working = registry.execute(request, working)
        assert response.ok
        operations.append(Transaction(request=request, response=response, originator_id="l2-0"))
    return BatchTransaction(session_id=session_id, operations=tuple(operations),
                            originator_id="l2-0")


class L1Harness:
    """n consensus nodes plus a passive submitter endpoint."""

    def __init__(self, n=4, behaviors=None, seed=1):
        model = LatencyModel(base_delay=1_000, jitter=0, proc_delay=100, exec_delay=100)
        self.net = VirtualNet(model, seed=seed)
        ids = [f"l1-{i}" for i in range(n)]
        behaviors = behaviors or {}
        self.nodes = {}
        for node_id in ids:
            node = L1Node(node_id, ids, build_registry(), behavior=behaviors.get(node_id, "Honest"))
            self.nodes[node_id] = node
            self.net.add_node(node_id, node)
        self.submitter = Collector()
        self.net.add_node("l2-0", self.submitter, proc_delay=0)

    def submit(self, batch, to="l1-0"):
        self.net.send("l2-0", to, "SubmitBatch", {
            "batch": batch.to_doc(),
            "authenticator": submit_authenticator("l2-0", batch),
            "relay": False,
        })

    def run(self, cap=None):
        return self.net.run_until_quiescent(cap)

    def results(self):
        return [payload for _, _, kind, payload in self.submitter.received
                if kind == "CommitResult"]

    def honest(self):
        return [n for n in self.nodes.values() if n.behavior == "Honest"]


class TestSubmitAndCommit:
    def test_valid_batch_commits_on_all_honest(self):
        harness = L1Harness(n=4)
        harness.submit(build_valid_batch())
        harness.run()
        results = harness.results()
        assert len(results) == 1 and results[0]["committed"]
        for node in harness.nodes.values():
            assert node.height == 1
            assert len(node.ledger[0].quorum_cert) >= quorum(4)
            assert verify_chain(node.ledger, 4)

    def test_commit_result_carries_matching_ref(self):
        harness = L1Harness(n=4)
        batch = build_valid_batch()
        harness.submit(batch)
        harness.run()
        ref = harness.results()[0]["l1_ref"]
        assert ref["tx_hash"] == batch.tx_hash()
        assert ref["block_height"] == 0

    def test_invalid_batch_rejected_by_quorum(self):
        batch = build_valid_batch()
        # Corrupt one embedded response body: honest re-execution differs.
        doc = batch.to_doc()
        doc["operations"][2]["response"]["body"]["stage"] = "Labeled"
        bad = BatchTransaction.from_doc(doc)
        harness = L1Harness(n=4)
        harness.submit(bad)
        harness.run()
        results = harness.results()
        assert len(results) == 1
        assert not results[0]["committed"]
        assert results[0]["reason"] == "rejected_by_quorum"
        assert all(node.height == 0 for node in harness.nodes.values())

    def test_duplicate_session_submission_rejected(self):
        harness = L1Harness(n=4)
        batch = build_valid_batch()
        harness.submit(batch)
        harness.run()
        harness.submit(batch)
        harness.run()
        results = harness.results()
        assert len(results) == 2
        assert results[1]["reason"] == "duplicate_session"
        assert not results[1]["committed"]
        assert all(node.height == 1 for node in harness.nodes.values())

    def test_stage_violating_batch_rejected(self):
        batch = build_valid_batch()
        ops = list(batch.operations)
        ops[1], ops[2] = ops[2], ops[1]  # scan and validate swapped
        bad = BatchTransaction(session_id=batch.session_id, operations=tuple(ops),
                               originator_id=batch.originator_id)
        harness = L1Harness(n=4)
        harness.submit(bad)
        harness.run()
        assert not harness.results()[0]["committed"]

    def test_bad_submit_authenticator_ignored(self):
        harness = L1Harness(n=4)
        batch = build_valid_batch()
        harness.net.send("l2-0", "l1-0", "SubmitBatch", {
            "batch": batch.to_doc(),
            "authenticator": b"\x00" * 32,
            "relay": False,
        })
        harness.run()
        assert harness.results() == []
        assert all(node.height == 0 for node in harness.nodes.values())


class TestByzantineProposers:
    def test_silent_proposer_rotates_and_commits(self):
        harness = L1Harness(n=4, behaviors={"l1-0": "Silent"})
        harness.submit(build_valid_batch(), to="l1-1")
        harness.run()
        results = harness.results()
        assert len(results) == 1 and results[0]["committed"]
        heights = [n.height for n in harness.honest()]
        assert heights == [1, 1, 1]

    def test_wrong_result_proposer_block_rejected_then_honest_commit(self):
        harness = L1Harness(n=4, behaviors={"l1-0": "WrongResult"})
        harness.submit(build_valid_batch(), to="l1-1")
        harness.run()
        results = harness.results()
        assert len(results) == 1 and results[0]["committed"]
        for node in harness.honest():
            assert node.height == 1
            # The committed block is the honest re-proposal, not the forgery.
            op_bodies = [op.response.body for b in node.ledger[0].tx_list for op in b.operations]
            assert all("forged" not in body for body in op_bodies)

    def test_equivocating_proposer_commits_at_most_one_hash(self):
        harness = L1Harness(n=7, behaviors={"l1-0": "Equivocate"})
        harness.submit(build_valid_batch(), to="l1-1")
        harness.run()
        committed = {}
        for node in harness.honest():
            if node.height >= 1:
                committed.setdefault(node.ledger[0].block_hash(), []).append(node.node_id)
        assert len(committed) <= 1

    def test_wrong_result_validator_cannot_carry_bad_block(self):
        # One lying validator accepts everything; an invalid batch still
        # cannot reach quorum (1 liar + 0 honest accepts < 3).
        batch = build_valid_batch()
        doc = batch.to_doc()
        doc["operations"][0]["response"]["body"]["package_id"] = "PKG-FORGED"
        bad = BatchTransaction.from_doc(doc)
        harness = L1Harness(n=4, behaviors={"l1-3": "WrongResult"})
        harness.submit(bad)
        harness.run()
        assert all(node.height == 0 for node in harness.honest())

    def test_fault_threshold_boundary(self):
        # At f liars the invalid batch is cleanly rejected; one past the
        # budget the guarantee degrades to "never commits or the checker
        # flags it" (liveness may be lost, so the run is time-capped).
        def forged():
            doc = build_valid_batch().to_doc()
            doc["operations"][0]["response"]["body"]["package_id"] = "PKG-FORGED"
            return BatchTransaction.from_doc(doc)

        at_budget = L1Harness(n=4, behaviors={"l1-3": "WrongResult"})
        at_budget.submit(forged())
        at_budget.run(cap=2_000_000)
        assert all(node.height == 0 for node in at_budget.honest())
        results = at_budget.results()
        assert results and results[0]["reason"] == "rejected_by_quorum"

        past_budget = L1Harness(n=4, behaviors={"l1-2": "WrongResult",
                                                "l1-3": "WrongResult"})
        past_budget.submit(forged())
        past_budget.run(cap=2_000_000)
        honest = past_budget.honest()
        committed = [node for node in honest if node.height > 0]
        # Guarantee boundary: the forgery either still fails quorum, or the
        # independent replay audit flags whatever was committed.
        if committed:
            from sessionbft.cluster import replay_audit

            assert any(replay_audit(node.ledger) for node in committed)


class TestLookups:
    def test_get_block_and_get_tx(self):
        harness = L1Harness(n=4)
        batch = build_valid_batch()
        harness.submit(batch)
        harness.run()
        node = harness.nodes["l1-2"]
        assert node.get_block(0) is not None
        assert node.get_block(5) is None
        hit = node.get_tx(batch.tx_hash())
        assert hit is not None
        assert hit[1].block_height == 0
        assert node.get_tx(codec.digest(b"missing")) is None

    def test_lookups_agree_across_correct_nodes(self):
        harness = L1Harness(n=4)
        batch = build_valid_batch()
        harness.submit(batch)
        harness.run()
        refs = {node.get_tx(batch.tx_hash())[1] for node in harness.nodes.values()}
        assert len(refs) == 1

    def test_replica_state_replayable_from_ledger(self):
        harness = L1Harness(n=4)
        harness.submit(build_valid_batch())
        harness.run()
        for node in harness.nodes.values():
            replica = AppState()
            for block in node.ledger:
                for b in block.tx_list:
                    for op in b.operations:
                        replica = replica.apply_delta(op.response.state_delta)
            assert replica.canonical_bytes() == node.app_state.canonical_bytes()


class TestMultiHeight:
    def test_ten_block_chain_verifies(self):
        harness = L1Harness(n=4)
        for i in range(10):
            harness.submit(build_valid_batch(session_id=f"S-{i}", package_id=f"PKG-{i}"))
            harness.run()
        for node in harness.nodes.values():
            assert node.height == 10
            assert verify_chain(node.ledger, 4)
