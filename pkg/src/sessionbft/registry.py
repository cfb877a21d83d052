"""Service registry and the reference supply-chain workflow.

Handlers are pure functions ``(request, state) -> (response, state)``.
They never read clocks or randomness: every node that executes the same
request against the same state must produce byte-identical output, since
consensus on both layers is agreement on exactly those bytes.

Application state is a flat key -> document map. Handlers express writes
as a ``state_delta`` list on the response; the registry applies the delta,
so the returned state is exactly the input state plus the declared writes,
and a rejection can never leak a partial mutation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import codec
from .model import STATUS_OK, ServiceRequest, ServiceResponse

# Workflow stages, in the only order a session may traverse them.
STAGES = ("Started", "Scanned", "Validated", "QualityChecked", "Labeled")

SESSION_ACTIVE = "Active"
SESSION_COMMITTING = "Committing"
SESSION_COMMITTED = "Committed"
SESSION_ABORTED = "Aborted"

PKG_CREATED = "Created"
PKG_IN_SESSION = "InSession"

# Machine-readable rejection reasons; the gateway maps these onto HTTP.
REASON_NOT_FOUND = "not_found"
REASON_DUPLICATE = "duplicate"
REASON_STAGE_ORDER = "stage_order"
REASON_BAD_SIGNATURE = "bad_signature"
REASON_ALREADY_IN_SESSION = "already_in_session"
REASON_SESSION_NOT_ACTIVE = "session_not_active"
REASON_MALFORMED = "malformed"
REASON_PACKAGE_MISMATCH = "package_mismatch"

HANDLER_REASONS = (
    REASON_NOT_FOUND,
    REASON_DUPLICATE,
    REASON_STAGE_ORDER,
    REASON_BAD_SIGNATURE,
    REASON_ALREADY_IN_SESSION,
    REASON_SESSION_NOT_ACTIVE,
    REASON_MALFORMED,
    REASON_PACKAGE_MISMATCH,
)

COURIERS = ("courier-1", "courier-2", "courier-3")

DEFAULT_SUPPLIER = "supplier"


class RouteNotFoundError(KeyError):
    """Requested route is not in the registry."""


class DuplicateRouteError(ValueError):
    """Route registered twice."""


@dataclass(frozen=True)
class AppState:
    """Immutable key -> document application state."""

    entries: dict = field(default_factory=dict)

    def get(self, key: str):
        return self.entries.get(key)

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def apply_delta(self, delta) -> "AppState":
        updated = dict(self.entries)
        for key, value in delta:
            updated[key] = value
        return AppState(updated)

    def to_doc(self) -> dict:
        return dict(self.entries)

    def canonical_bytes(self) -> bytes:
        return codec.canonical_serialize(self.entries)

    def digest(self) -> bytes:
        return codec.digest(self.canonical_bytes())


def package_key(package_id: str) -> str:
    return f"package:{package_id}"


def session_key(session_id: str) -> str:
    return f"session:{session_id}"


def courier_key(session_id: str) -> str:
    return f"courier:{session_id}"


def sign_package(package_id: str, expected_contents, supplier_id: str = DEFAULT_SUPPLIER) -> bytes:
    """Supplier authenticator over the package identity and contents."""
    payload = codec.canonical_serialize(
        {"package_id": package_id, "expected_contents": list(expected_contents)}
    )
    return codec.authenticate(codec.supplier_key(supplier_id), payload)


def _verify_package_signature(pkg: dict) -> bool:
    payload = codec.canonical_serialize(
        {"package_id": pkg["package_id"], "expected_contents": pkg["expected_contents"]}
    )
    key = codec.supplier_key(pkg.get("supplier_id", DEFAULT_SUPPLIER))
    return codec.verify_authenticator(key, payload, pkg["origin_signature"])


def assign_courier(session_id: str) -> str:
    index = int.from_bytes(codec.digest(session_id.encode("utf-8"))[:8], "big")
    return COURIERS[index % len(COURIERS)]


class Registry:
    """Route -> handler map, identical on every node built from one config."""

    def __init__(self):
        self._routes: dict[str, callable] = {}

    def register(self, route: str, handler) -> None:
        if route in self._routes:
            raise DuplicateRouteError(route)
        self._routes[route] = handler

    def resolve(self, route: str):
        try:
            return self._routes[route]
        except KeyError:
            raise RouteNotFoundError(route) from None

    def routes(self) -> list[str]:
        return sorted(self._routes)

    def table_doc(self) -> dict:
        return {route: handler.__name__ for route, handler in self._routes.items()}

    def execute(self, request: ServiceRequest, state: AppState) -> tuple[ServiceResponse, AppState]:
        handler = self.resolve(request.route)
        response = handler(request, state)
        if response.status != STATUS_OK:
            return response, state
        return response, state.apply_delta(response.state_delta)


# -- workflow handlers -------------------------------------------------------


def _package_descriptor(body: dict) -> dict | None:
    pkg = body.get("package")
    if not isinstance(pkg, dict):
        return None
    if not isinstance(pkg.get("package_id"), str) or not pkg["package_id"]:
        return None
    contents = pkg.get("expected_contents")
    if not isinstance(contents, list) or not all(isinstance(c, str) for c in contents):
        return None
    if not isinstance(pkg.get("origin_signature"), bytes):
        return None
    return {
        "package_id": pkg["package_id"],
        "expected_contents": list(contents),
        "origin_signature": pkg["origin_signature"],
        "supplier_id": pkg.get("supplier_id", DEFAULT_SUPPLIER),
    }


def create_package(request: ServiceRequest, state: AppState) -> ServiceResponse:
    """Register a new package outside any session."""
    body = request.body
    package_id = body.get("package_id")
    contents = body.get("expected_contents")
    signature = body.get("origin_signature")
    if (
        not isinstance(package_id, str)
        or not package_id
        or not isinstance(contents, list)
        or not all(isinstance(c, str) for c in contents)
        or not isinstance(signature, bytes)
    ):
        return ServiceResponse.rejected(REASON_MALFORMED)
    if package_key(package_id) in state:
        return ServiceResponse.rejected(REASON_DUPLICATE, package_id=package_id)
    doc = {
        "package_id": package_id,
        "expected_contents": list(contents),
        "origin_signature": signature,
        "supplier_id": body.get("supplier_id", DEFAULT_SUPPLIER),
        "status": PKG_CREATED,
    }
    return ServiceResponse(
        STATUS_OK,
        {"package_id": package_id, "status": PKG_CREATED},
        ((package_key(package_id), doc),),
    )


def start_session(request: ServiceRequest, state: AppState) -> ServiceResponse:
    """Open a processing session for one package.

    The request body carries the full package descriptor (the originating
    node fills it in from its own state), so validators whose replica
    predates the package can still re-execute to identical bytes. When the
    package is present locally the descriptor must match it exactly.
    """
    session_id = request.session_id
    if not session_id:
        return ServiceResponse.rejected(REASON_MALFORMED)
    pkg = _package_descriptor(request.body)
    if pkg is None:
        return ServiceResponse.rejected(REASON_MALFORMED)
    if session_key(session_id) in state:
        return ServiceResponse.rejected(REASON_DUPLICATE, session_id=session_id)
    existing = state.get(package_key(pkg["package_id"]))
    if existing is not None:
        if existing["status"] != PKG_CREATED:
            return ServiceResponse.rejected(REASON_ALREADY_IN_SESSION, package_id=pkg["package_id"])
        stored = {k: existing[k] for k in ("package_id", "expected_contents", "origin_signature", "supplier_id")}
        if stored != pkg:
            return ServiceResponse.rejected(REASON_PACKAGE_MISMATCH, package_id=pkg["package_id"])
    package_doc = dict(pkg, status=PKG_IN_SESSION)
    session_doc = {
        "session_id": session_id,
        "package_id": pkg["package_id"],
        "stage": "Started",
        "status": SESSION_ACTIVE,
    }
    return ServiceResponse(
        STATUS_OK,
        {"session_id": session_id, "package_id": pkg["package_id"], "stage": "Started"},
        (
            (package_key(pkg["package_id"]), package_doc),
            (session_key(session_id), session_doc),
        ),
    )


def _session_for_stage(request: ServiceRequest, state: AppState, target_stage: str):
    """Common preconditions for stage-advancing handlers.

    Returns (session_doc, package_doc, None) or (None, None, rejection).
    """
    session_id = request.session_id
    if not session_id:
        return None, None, ServiceResponse.rejected(REASON_MALFORMED)
    session = state.get(session_key(session_id))
    if session is None:
        return None, None, ServiceResponse.rejected(REASON_NOT_FOUND, session_id=session_id)
    if session["status"] != SESSION_ACTIVE:
        return None, None, ServiceResponse.rejected(REASON_SESSION_NOT_ACTIVE, session_id=session_id)
    expected_prev = STAGES[STAGES.index(target_stage) - 1]
    if session["stage"] != expected_prev:
        return None, None, ServiceResponse.rejected(
            REASON_STAGE_ORDER, session_id=session_id,
            stage=session["stage"], required=expected_prev,
        )
    package = state.get(package_key(session["package_id"]))
    if package is None:
        return None, None, ServiceResponse.rejected(REASON_NOT_FOUND, package_id=session["package_id"])
    return session, package, None


def _advance(session: dict, stage: str) -> dict:
    return dict(session, stage=stage)


def scan_package(request: ServiceRequest, state: AppState) -> ServiceResponse:
    """Identify the package and retrieve its expected contents."""
    session, package, rejection = _session_for_stage(request, state, "Scanned")
    if rejection:
        return rejection
    return ServiceResponse(
        STATUS_OK,
        {
            "session_id": session["session_id"],
            "stage": "Scanned",
            "expected_contents": list(package["expected_contents"]),
        },
        ((session_key(session["session_id"]), _advance(session, "Scanned")),),
    )


def validate_package(request: ServiceRequest, state: AppState) -> ServiceResponse:
    """Check the package's origin authenticator against the supplier key."""
    session, package, rejection = _session_for_stage(request, state, "Validated")
    if rejection:
        return rejection
    if not _verify_package_signature(package):
        return ServiceResponse.rejected(REASON_BAD_SIGNATURE, package_id=package["package_id"])
    return ServiceResponse(
        STATUS_OK,
        {"session_id": session["session_id"], "stage": "Validated", "origin": "verified"},
        ((session_key(session["session_id"]), _advance(session, "Validated")),),
    )


def quality_check(request: ServiceRequest, state: AppState) -> ServiceResponse:
    """Quality-control inspection step."""
    session, _package, rejection = _session_for_stage(request, state, "QualityChecked")
    if rejection:
        return rejection
    return ServiceResponse(
        STATUS_OK,
        {"session_id": session["session_id"], "stage": "QualityChecked", "inspection": "pass"},
        ((session_key(session["session_id"]), _advance(session, "QualityChecked")),),
    )


def label_package(request: ServiceRequest, state: AppState) -> ServiceResponse:
    """Generate the shipping label and deterministically assign a courier."""
    session, _package, rejection = _session_for_stage(request, state, "Labeled")
    if rejection:
        return rejection
    sid = session["session_id"]
    courier = assign_courier(sid)
    return ServiceResponse(
        STATUS_OK,
        {"session_id": sid, "stage": "Labeled", "courier": courier},
        (
            (session_key(sid), _advance(session, "Labeled")),
            (courier_key(sid), {"session_id": sid, "courier": courier}),
        ),
    )


def abort_session(request: ServiceRequest, state: AppState) -> ServiceResponse:
    """Abandon an active session; its buffered operations are discarded."""
    session_id = request.session_id
    if not session_id:
        return ServiceResponse.rejected(REASON_MALFORMED)
    session = state.get(session_key(session_id))
    if session is None:
        return ServiceResponse.rejected(REASON_NOT_FOUND, session_id=session_id)
    if session["status"] != SESSION_ACTIVE:
        return ServiceResponse.rejected(REASON_SESSION_NOT_ACTIVE, session_id=session_id)
    return ServiceResponse(
        STATUS_OK,
        {"session_id": session_id, "status": SESSION_ABORTED},
        ((session_key(session_id), dict(session, status=SESSION_ABORTED)),),
    )


ROUTE_CREATE_PACKAGE = "/packages"
ROUTE_START_SESSION = "/sessions"
ROUTE_SCAN = "/sessions/{id}/scan"
ROUTE_VALIDATE = "/sessions/{id}/validate"
ROUTE_QUALITY_CHECK = "/sessions/{id}/quality-check"
ROUTE_LABEL = "/sessions/{id}/label"
ROUTE_ABORT = "/sessions/{id}/abort"

WORKFLOW_ROUTES = (
    ROUTE_START_SESSION,
    ROUTE_SCAN,
    ROUTE_VALIDATE,
    ROUTE_QUALITY_CHECK,
    ROUTE_LABEL,
)


def build_registry() -> Registry:
    """The handler set every node registers at startup."""
    registry = Registry()
    registry.register(ROUTE_CREATE_PACKAGE, create_package)
    registry.register(ROUTE_START_SESSION, start_session)
    registry.register(ROUTE_SCAN, scan_package)
    registry.register(ROUTE_VALIDATE, validate_package)
    registry.register(ROUTE_QUALITY_CHECK, quality_check)
    registry.register(ROUTE_LABEL, label_package)
    registry.register(ROUTE_ABORT, abort_session)
    return registry
