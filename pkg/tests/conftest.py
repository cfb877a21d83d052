import random

import pytest

from sessionbft.model import ClusterConfig, LatencyModel, ServiceRequest
from sessionbft.registry import AppState, build_registry, sign_package


@pytest.fixture
def registry():
    return build_registry()


@pytest.fixture
def fast_model():
    """Low-delay model to keep protocol tests quick."""
    return LatencyModel(base_delay=1000, jitter=0, proc_delay=100, exec_delay=100)


@pytest.fixture
def fast_config(fast_model):
    return ClusterConfig(n_l1=4, n_l2=1, seed=1, latency_model=fast_model)


def make_package_request(package_id="PKG-1", contents=("bolt", "nut"), nonce=1,
                         signature=None, client_id="client"):
    contents = list(contents)
    return ServiceRequest(
        route="/packages",
        body={
            "package_id": package_id,
            "expected_contents": contents,
            "origin_signature": sign_package(package_id, contents) if signature is None else signature,
        },
        client_id=client_id,
        nonce=nonce,
    )


def drive_to_stage(registry, state, session_id="S-1", package_id="PKG-1", upto="Labeled"):
    """Build an AppState with one session advanced to the requested stage."""
    response, state = registry.execute(make_package_request(package_id), state)
    assert response.ok
    pkg = state.get(f"package:{package_id}")
    descriptor = {k: pkg[k] for k in ("package_id", "expected_contents", "origin_signature", "supplier_id")}
    request = ServiceRequest(
        route="/sessions",
        body={"package_id": package_id, "package": descriptor},
        session_id=session_id,
        nonce=2,
    )
    response, state = registry.execute(request, state)
    assert response.ok
    steps = [
        ("Scanned", "/sessions/{id}/scan"),
        ("Validated", "/sessions/{id}/validate"),
        ("QualityChecked", "/sessions/{id}/quality-check"),
        ("Labeled", "/sessions/{id}/label"),
    ]
    nonce = 3
    for stage, route in steps:
        if _stage_index(upto) < _stage_index(stage):
            break
        request = ServiceRequest(route=route, body={}, session_id=session_id, nonce=nonce)
        response, state = registry.execute(request, state)
        assert response.ok, response.to_doc()
        nonce += 1
    return state


def _stage_index(stage):
    from sessionbft.registry import STAGES

    return STAGES.index(stage)


def seeded_rng(seed=0):
    return random.Random(seed)
