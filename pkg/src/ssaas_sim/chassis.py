"""Shared service-side building blocks.

Everything a node needs besides the transport lives here: path routing,
request/reply plumbing, the circuit breaker, client-side discovery with a
cached round-robin resolver, versioned config handling, and the tolerant
decoder used at every service boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional

from .simwire import NETWORK_ERROR_STATUS, Body, Envelope, MessageKind, Simulator

DEFAULT_BREAKER_THRESHOLD = 5
DEFAULT_BREAKER_OPEN_TICKS = 30
DEFAULT_CACHE_TTL_TICKS = 10
DEFAULT_CALL_DEADLINE_TICKS = 5
DEFAULT_RENEW_INTERVAL_TICKS = 10

UPSTREAM_UNAVAILABLE_STATUS = "503"
UPSTREAM_UNAVAILABLE_BODY = {"error": "UpstreamUnavailable"}


class ChassisError(Exception):
    pass


class NoInstances(ChassisError):
    """Resolution found no instance eligible for a call."""


class DecodeError(ChassisError):
    def __init__(self, fieldname: str) -> None:
        super().__init__(f"missing required field: {fieldname}")
        self.field = fieldname


def decode_tolerant(body: Body, required: list[str]) -> dict[str, Any]:
    """Extract ``required`` fields from a structured body, ignoring any
    extras. Raises :class:`DecodeError` naming the first missing field."""
    if not isinstance(body, dict):
        raise DecodeError(required[0] if required else "<body>")
    out = {}
    for key in required:
        if key not in body:
            raise DecodeError(key)
        out[key] = body[key]
    return out


# -- circuit breaker ---------------------------------------------------------

class CircuitState(str, Enum):
    CLOSED = "CLOSED"
    OPEN = "OPEN"
    HALF_OPEN = "HALF_OPEN"


class CircuitBreaker:
    """Consecutive-failure breaker guarding one downstream instance.

    CLOSED counts consecutive failures and trips at the threshold. OPEN
    rejects everything until ``open_duration`` ticks have passed, then the
    next admission becomes the single HALF_OPEN probe: success closes the
    circuit, failure reopens it with a fresh timer. Results that arrive
    while OPEN (late responses from before the trip) change nothing.
    """

    def __init__(self, threshold: int = DEFAULT_BREAKER_THRESHOLD,
                 open_duration: int = DEFAULT_BREAKER_OPEN_TICKS,
                 config: Optional["ConfigView"] = None) -> None:
        self._threshold = threshold
        self._open_duration = open_duration
        self._config = config
        self.state = CircuitState.CLOSED
        self.consecutive_failures = 0
        self.opened_at: Optional[int] = None
        self.probe_inflight = 0

    @property
    def threshold(self) -> int:
        if self._config is not None:
            return self._config.get_int("breaker.threshold", self._threshold)
        return self._threshold

    @property
    def open_duration(self) -> int:
        if self._config is not None:
            return self._config.get_int("breaker.open_ticks", self._open_duration)
        return self._open_duration

    def can_attempt(self, now: int) -> bool:
        """Would :meth:`allow` admit a call right now? Never mutates."""
        if self.state is CircuitState.CLOSED:
            return True
        if self.state is CircuitState.OPEN:
            assert self.opened_at is not None
            return now - self.opened_at >= self.open_duration
        return self.probe_inflight < 1

    def allow(self, now: int) -> bool:
        """Admit a call, moving OPEN to HALF_OPEN when the wait is over."""
        if self.state is CircuitState.CLOSED:
            return True
        if self.state is CircuitState.OPEN:
            assert self.opened_at is not None
            if now - self.opened_at >= self.open_duration:
                self.state = CircuitState.HALF_OPEN
                self.probe_inflight = 1
                return True
            return False
        if self.probe_inflight < 1:
            self.probe_inflight = 1
            return True
        return False

    def record_result(self, success: bool, now: int) -> None:
        if self.state is CircuitState.CLOSED:
            if success:
                self.consecutive_failures = 0
            else:
                self.consecutive_failures += 1
                if self.consecutive_failures >= self.threshold:
                    self.state = CircuitState.OPEN
                    self.opened_at = now
        elif self.state is CircuitState.HALF_OPEN:
            self.probe_inflight = 0
            if success:
                self.state = CircuitState.CLOSED
                self.consecutive_failures = 0
                self.opened_at = None
            else:
                self.state = CircuitState.OPEN
                self.opened_at = now
                self.consecutive_failures = 0
        # OPEN: late result, ignored.


# -- discovery cache + round robin -------------------------------------------

@dataclass(frozen=True)
class Endpoint:
    instance_id: str
    node: str


@dataclass
class _ServiceCache:
    endpoints: list[Endpoint] = field(default_factory=list)
    fetched_at: Optional[int] = None
    rotation: int = 0


class Resolver:
    """Client-side instance cache with per-service round-robin rotation.

    The rotation index survives cache refreshes as long as the instance
    membership (the set of ids) is unchanged, and resets when instances
    appear or disappear so the cycle stays well defined.
    """

    def __init__(self, cache_ttl: int = DEFAULT_CACHE_TTL_TICKS) -> None:
        self.cache_ttl = cache_ttl
        self._services: dict[str, _ServiceCache] = {}

    def fresh(self, service: str, now: int) -> bool:
        entry = self._services.get(service)
        return entry is not None and entry.fetched_at is not None \
            and now - entry.fetched_at < self.cache_ttl

    def update(self, service: str, endpoints: list[Endpoint], now: int) -> None:
        entry = self._services.setdefault(service, _ServiceCache())
        if {e.instance_id for e in entry.endpoints} != {e.instance_id for e in endpoints}:
            entry.rotation = 0
        entry.endpoints = list(endpoints)
        entry.fetched_at = now

    def resolve(self, service: str, now: int,
                allowed: Optional[Callable[[Endpoint], bool]] = None) -> Endpoint:
        entry = self._services.get(service)
        if entry is None or not entry.endpoints:
            raise NoInstances(service)
        eligible = [e for e in entry.endpoints if allowed is None or allowed(e)]
        if not eligible:
            raise NoInstances(service)
        pick = eligible[entry.rotation % len(eligible)]
        entry.rotation += 1
        return pick

    def invalidate(self, service: str) -> None:
        self._services.pop(service, None)


# -- config view --------------------------------------------------------------

class ConfigView:
    """A node's current configuration document.

    Versions are (default_version, profile_version) pairs; refreshes apply
    only when strictly newer, so reordered notifications cannot roll a node
    back. Entries are replaced wholesale on apply.
    """

    def __init__(self) -> None:
        self.version: tuple[int, int] = (0, 0)
        self.entries: dict[str, str] = {}

    def apply_refresh(self, version: tuple[int, int], entries: dict[str, str]) -> bool:
        version = (int(version[0]), int(version[1]))
        if version <= self.version:
            return False
        self.version = version
        self.entries = dict(entries)
        return True

    def get(self, key: str, default: Optional[str] = None) -> Optional[str]:
        return self.entries.get(key, default)

    def get_int(self, key: str, default: int) -> int:
        raw = self.entries.get(key)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            return default


# -- requests and routing ------------------------------------------------------

@dataclass
class Request:
    method: str
    path: str
    body: Body
    source: str
    headers: dict[str, str] = field(default_factory=dict)
    params: dict[str, str] = field(default_factory=dict)
    env: Optional[Envelope] = None
    replied: bool = False
    _reply: Optional[Callable[[str, Body], None]] = None

    def reply(self, status: str, body: Body = None) -> None:
        if self.replied:
            return
        self.replied = True
        if self._reply is not None:
            self._reply(str(status), body)


@dataclass
class _Route:
    method: str
    segments: list[str]
    handler: Callable[[Request], Optional[tuple[str, Body]]]

    def match(self, method: str, parts: list[str]) -> Optional[tuple[int, dict[str, str]]]:
        if method != self.method or len(parts) != len(self.segments):
            return None
        params: dict[str, str] = {}
        score = 0
        for seg, part in zip(self.segments, parts):
            if seg.startswith("{") and seg.endswith("}"):
                params[seg[1:-1]] = part
            elif seg == part:
                score += 1
            else:
                return None
        return score, params


def _split(path: str) -> list[str]:
    return [p for p in path.split("/") if p]


class ServiceNode:
    """Base class for every service: route table, reply plumbing, timers,
    a config view, and an optional outbound client.

    A node is either bound to the wire (one simulator node per instance) or
    hosted in-process by another node that forwards requests to
    :meth:`dispatch` directly.
    """

    def __init__(self, sim: Simulator, node_id: str, service: str,
                 profile: str = "default") -> None:
        self.sim = sim
        self.node_id = node_id
        self.service = service
        self.profile = profile
        self.config = ConfigView()
        self.client: Optional[ServiceClient] = None
        self._routes: list[_Route] = []
        self.route("POST", "/refresh", self._handle_refresh)

    def bind(self) -> "ServiceNode":
        self.sim.add_node(self.node_id, self._on_envelope)
        return self

    def route(self, method: str, pattern: str,
              handler: Callable[[Request], Optional[tuple[str, Body]]]) -> None:
        self._routes.append(_Route(method, _split(pattern), handler))

    def set_timer(self, delay: int, fn: Callable[[], None],
                  maintenance: Optional[bool] = None) -> int:
        return self.sim.set_timer(self.node_id, delay, fn, maintenance=maintenance)

    def every(self, interval: int, fn: Callable[[], None]) -> None:
        """Run ``fn`` every ``interval`` ticks as maintenance traffic."""
        def tick() -> None:
            fn()
            self.sim.set_timer(self.node_id, interval, tick, maintenance=True)
        self.sim.set_timer(self.node_id, interval, tick, maintenance=True)

    # -- inbound ---------------------------------------------------------

    def _on_envelope(self, env: Envelope) -> None:
        if env.kind is MessageKind.RESPONSE:
            if self.client is not None:
                self.client.handle_response(env)
            return
        req = Request(method=env.method, path=env.path, body=env.body,
                      source=env.source, headers=dict(env.headers), env=env,
                      _reply=lambda status, body, e=env: self.sim.send(
                          Envelope.response(e, status, body)))
        self.dispatch(req)

    def dispatch(self, req: Request) -> None:
        parts = _split(req.path)
        best: Optional[tuple[int, _Route, dict[str, str]]] = None
        for route in self._routes:
            hit = route.match(req.method, parts)
            if hit is not None and (best is None or hit[0] > best[0]):
                best = (hit[0], route, hit[1])
        if best is None:
            req.reply("404", {"error": "NoRoute"})
            return
        req.params = best[2]
        out = best[1].handler(req)
        if out is not None:
            req.reply(out[0], out[1])

    # -- config ----------------------------------------------------------

    def _handle_refresh(self, req: Request) -> Optional[tuple[str, Body]]:
        try:
            doc = decode_tolerant(req.body, ["service", "profile", "version", "entries"])
        except DecodeError as exc:
            return "400", {"error": "Malformed", "field": exc.field}
        if doc["service"] != self.service or doc["profile"] != self.profile:
            return "200", {"applied": False}
        applied = self.config.apply_refresh(tuple(doc["version"]), doc["entries"])
        if applied:
            self.on_config_applied()
        return "200", {"applied": applied}

    def on_config_applied(self) -> None:
        """Hook for nodes that derive state from config entries."""


# -- outbound client ------------------------------------------------------------

class WiringMode(str, Enum):
    LIBRARY_CALL = "LIBRARY_CALL"
    DIRECT_WIRE = "DIRECT_WIRE"
    DISCOVERED = "DISCOVERED"


class CallStatus(str, Enum):
    OK = "OK"
    FAST_FAIL = "FAST_FAIL"
    REMOTE_ERROR = "REMOTE_ERROR"
    TIMEOUT = "TIMEOUT"


@dataclass
class CallResult:
    status: CallStatus
    body: Body = None
    attempts: int = 1
    remote_status: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.status is CallStatus.OK


@dataclass
class _Pending:
    service: str
    instance_id: str
    breaker: Optional[CircuitBreaker]
    on_result: Optional[Callable[[CallResult], None]]
    timer_id: int


class ServiceClient:
    """Outbound call port for a node, in one of three wiring modes.

    LIBRARY_CALL dispatches to co-resident peer nodes synchronously, in
    process. DIRECT_WIRE sends to a statically configured node per service.
    DISCOVERED resolves instances through the registry with a ttl cache,
    round-robin rotation, and one circuit breaker per instance.

    There are no automatic retries: one call, one attempt, one result.
    """

    def __init__(self, node: ServiceNode, mode: WiringMode,
                 registry_node: str = "registry",
                 deadline: int = DEFAULT_CALL_DEADLINE_TICKS) -> None:
        self.node = node
        self.sim = node.sim
        self.mode = mode
        self.registry_node = registry_node
        self.deadline = deadline
        self.peers: dict[str, ServiceNode] = {}
        self.direct: dict[str, str] = {}
        self.resolver = Resolver()
        self.breakers: dict[str, CircuitBreaker] = {}
        self._pending: dict[int, _Pending] = {}
        self._fetch_waiters: dict[str, list[Callable[[bool], None]]] = {}
        node.client = self

    # -- wiring setup ------------------------------------------------------

    def add_peer(self, service: str, peer: ServiceNode) -> None:
        self.peers[service] = peer

    def set_direct(self, service: str, node_id: str) -> None:
        self.direct[service] = node_id

    def breaker_for(self, instance_id: str) -> CircuitBreaker:
        brk = self.breakers.get(instance_id)
        if brk is None:
            brk = CircuitBreaker(config=self.node.config)
            self.breakers[instance_id] = brk
        return brk

    # -- calls -------------------------------------------------------------

    def call(self, service: str, method: str, path: str, body: Body = None,
             on_result: Optional[Callable[[CallResult], None]] = None,
             deadline: Optional[int] = None) -> None:
        if self.mode is WiringMode.LIBRARY_CALL:
            self._call_library(service, method, path, body, on_result)
        elif self.mode is WiringMode.DIRECT_WIRE:
            target = self.direct.get(service)
            if target is None:
                self._finish_fast(on_result)
                return
            if not self.breaker_for(target).allow(self.sim.now):
                self._finish_fast(on_result)
                return
            self._send_tracked(service, target, target, method, path, body,
                               on_result, deadline, use_breaker=True)
        else:
            self._call_discovered(service, method, path, body, on_result, deadline)

    def call_node(self, target_node: str, method: str, path: str, body: Body = None,
                  on_result: Optional[Callable[[CallResult], None]] = None,
                  deadline: Optional[int] = None, track_breaker: bool = False) -> None:
        """Send straight to a named node, bypassing resolution."""
        self._send_tracked(target_node, target_node, target_node, method, path,
                           body, on_result, deadline, use_breaker=track_breaker)

    def _call_library(self, service: str, method: str, path: str, body: Body,
                      on_result: Optional[Callable[[CallResult], None]]) -> None:
        peer = self.peers.get(service)
        if peer is None:
            self._finish_fast(on_result)
            return
        def reply(status: str, rbody: Body) -> None:
            if on_result is not None:
                on_result(_classify(status, rbody))
        req = Request(method=method, path=path, body=body,
                      source=self.node.node_id, _reply=reply)
        peer.dispatch(req)

    def _call_discovered(self, service: str, method: str, path: str, body: Body,
                         on_result: Optional[Callable[[CallResult], None]],
                         deadline: Optional[int]) -> None:
        now = self.sim.now
        if self.resolver.fresh(service, now):
            self._attempt(service, method, path, body, on_result, deadline)
            return
        def after_fetch(fetched: bool) -> None:
            if not fetched:
                self._finish_fast(on_result)
                return
            self._attempt(service, method, path, body, on_result, deadline)
        self._fetch_instances(service, after_fetch)

    def _fetch_instances(self, service: str, waiter: Callable[[bool], None]) -> None:
        waiters = self._fetch_waiters.get(service)
        if waiters is not None:
            waiters.append(waiter)
            return
        self._fetch_waiters[service] = [waiter]
        def on_fetch(result: CallResult) -> None:
            ok = False
            if result.ok and isinstance(result.body, list):
                endpoints = []
                try:
                    for item in result.body:
                        rec = decode_tolerant(item, ["instance_id", "address"])
                        endpoints.append(Endpoint(str(rec["instance_id"]), str(rec["address"])))
                except DecodeError:
                    endpoints = []
                else:
                    self.resolver.update(service, endpoints, self.sim.now)
                    ok = True
            pending = self._fetch_waiters.pop(service, [])
            for fn in pending:
                fn(ok)
        self.call_node(self.registry_node, "GET", f"/registry/{service}",
                       on_result=on_fetch)

    def _attempt(self, service: str, method: str, path: str, body: Body,
                 on_result: Optional[Callable[[CallResult], None]],
                 deadline: Optional[int]) -> None:
        now = self.sim.now
        try:
            endpoint = self.resolver.resolve(
                service, now,
                allowed=lambda e: self.breaker_for(e.instance_id).can_attempt(now))
        except NoInstances:
            self._finish_fast(on_result)
            return
        breaker = self.breaker_for(endpoint.instance_id)
        if not breaker.allow(now):
            self._finish_fast(on_result)
            return
        self._send_tracked(service, endpoint.instance_id, endpoint.node, method,
                           path, body, on_result, deadline, use_breaker=True)

    def _send_tracked(self, service: str, instance_id: str, target_node: str,
                      method: str, path: str, body: Body,
                      on_result: Optional[Callable[[CallResult], None]],
                      deadline: Optional[int], use_breaker: bool = False) -> None:
        env = Envelope.request(self.node.node_id, target_node, path,
                               method=method, body=body)
        mid = self.sim.send(env)
        wait = (deadline if deadline is not None else self.deadline) + 1
        timer = self.sim.set_timer(self.node.node_id, wait,
                                   lambda: self._on_deadline(mid))
        breaker = self.breaker_for(instance_id) if use_breaker else None
        self._pending[mid] = _Pending(service, instance_id, breaker, on_result, timer)

    def handle_response(self, env: Envelope) -> None:
        pending = self._pending.pop(env.correlation_id or -1, None)
        if pending is None:
            return  # late response: the deadline already decided this call
        self.sim.cancel_timer(pending.timer_id)
        result = _classify(env.status or "", env.body)
        if pending.breaker is not None:
            failure = result.status is CallStatus.TIMEOUT or (
                result.remote_status is not None and result.remote_status.startswith("5"))
            pending.breaker.record_result(not failure, self.sim.now)
        if pending.on_result is not None:
            pending.on_result(result)

    def _on_deadline(self, message_id: int) -> None:
        pending = self._pending.pop(message_id, None)
        if pending is None:
            return
        if pending.breaker is not None:
            pending.breaker.record_result(False, self.sim.now)
        if pending.on_result is not None:
            pending.on_result(CallResult(CallStatus.TIMEOUT))

    def _finish_fast(self, on_result: Optional[Callable[[CallResult], None]]) -> None:
        if on_result is not None:
            on_result(CallResult(CallStatus.FAST_FAIL))


def relay_result(req: Request, result: CallResult) -> None:
    """Answer an upstream call's outcome back out: unreachable upstreams
    become a plain 503, everything else passes through as-is."""
    if result.status in (CallStatus.FAST_FAIL, CallStatus.TIMEOUT):
        req.reply(UPSTREAM_UNAVAILABLE_STATUS, dict(UPSTREAM_UNAVAILABLE_BODY))
    else:
        req.reply(result.remote_status or "200", result.body)


def _classify(status: str, body: Body) -> CallResult:
    if status == NETWORK_ERROR_STATUS:
        return CallResult(CallStatus.TIMEOUT, body=body, remote_status=status)
    if status.startswith("2"):
        return CallResult(CallStatus.OK, body=body, remote_status=status)
    return CallResult(CallStatus.REMOTE_ERROR, body=body, remote_status=status)


# -- lifecycle helpers -----------------------------------------------------------

def enable_discovery(node: ServiceNode, port: int = 0,
                     renew_interval: int = DEFAULT_RENEW_INTERVAL_TICKS) -> None:
    """Register the node with the registry and keep its lease renewed.

    Renewals run as maintenance traffic. A renew rejected with 404 (lease
    already evicted) triggers one re-registration.
    """
    assert node.client is not None, "node needs a client before discovery"
    client = node.client
    reg_body = {"service": node.service, "instance_id": node.node_id,
                "address": node.node_id, "port": port, "status": "UP"}

    def register() -> None:
        client.call_node(client.registry_node, "POST",
                         f"/registry/{node.service}", dict(reg_body))

    def on_renew(result: CallResult) -> None:
        if result.status is CallStatus.REMOTE_ERROR and result.remote_status == "404":
            register()

    def beat() -> None:
        client.call_node(client.registry_node, "PUT",
                         f"/registry/{node.service}/{node.node_id}/renew",
                         on_result=on_renew)

    register()
    node.every(renew_interval, beat)


def enable_config(node: ServiceNode, confsvc_node: str = "confsvc") -> None:
    """Pull the node's config document once at startup; later changes
    arrive as pushed refresh notifications."""
    assert node.client is not None, "node needs a client before config pull"

    def on_pull(result: CallResult) -> None:
        if not result.ok:
            return
        try:
            doc = decode_tolerant(result.body, ["version", "entries"])
        except DecodeError:
            return
        if node.config.apply_refresh(tuple(doc["version"]), doc["entries"]):
            node.on_config_applied()

    node.client.call_node(confsvc_node, "GET",
                          f"/config/{node.service}/{node.profile}",
                          on_result=on_pull)
