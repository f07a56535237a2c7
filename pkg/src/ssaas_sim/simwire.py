"""Deterministic in-process message transport.

All inter-service traffic in every topology flows through a single
:class:`Simulator`: a logical integer clock, a time-ordered event queue
(FIFO within a tick), seeded randomness, and injectable fault rules.
Determinism is the contract: identical seed + identical operation
sequence produces an identical delivery trace, byte for byte.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field
from enum import Enum
from fnmatch import fnmatchcase
from typing import Any, Callable, Optional

Body = Any  # maps, lists, strings, ints, booleans, None

BASE_LATENCY_TICKS = 1

# Synthesized response status for sends that never reached a live handler.
NETWORK_ERROR_STATUS = "network-error"


class SimwireError(Exception):
    """Base class for transport errors."""


class UnknownNode(SimwireError):
    pass


class UnknownRule(SimwireError):
    pass


class InvalidEnvelope(SimwireError):
    pass


class InvalidFaultRule(SimwireError):
    pass


class FaultScriptError(SimwireError):
    pass


class MessageKind(str, Enum):
    REQUEST = "REQUEST"
    RESPONSE = "RESPONSE"


class FaultEffect(str, Enum):
    DROP = "DROP"
    PARTITION = "PARTITION"
    DELAY = "DELAY"
    KILL_NODE = "KILL_NODE"


@dataclass
class Envelope:
    """One message on the wire.

    ``message_id`` is assigned by the simulator at send time and strictly
    increases in send order. A RESPONSE echoes its request's id in
    ``correlation_id``.
    """

    source: str
    destination: str
    kind: MessageKind
    path: str
    method: str = "GET"
    headers: dict[str, str] = field(default_factory=dict)
    body: Body = None
    correlation_id: Optional[int] = None
    message_id: Optional[int] = None

    @staticmethod
    def request(source: str, destination: str, path: str, method: str = "GET",
                body: Body = None, headers: Optional[dict[str, str]] = None) -> "Envelope":
        return Envelope(source=source, destination=destination, kind=MessageKind.REQUEST,
                        path=path, method=method, headers=dict(headers or {}), body=body)

    @staticmethod
    def response(to: "Envelope", status: str, body: Body = None,
                 headers: Optional[dict[str, str]] = None) -> "Envelope":
        hdrs = dict(headers or {})
        hdrs["status"] = status
        return Envelope(source=to.destination, destination=to.source, kind=MessageKind.RESPONSE,
                        path=to.path, method=to.method, headers=hdrs, body=body,
                        correlation_id=to.message_id)

    @property
    def status(self) -> Optional[str]:
        return self.headers.get("status")


@dataclass
class FaultRule:
    """A fault selector: DROP and DELAY match (source, destination),
    PARTITION matches either direction, KILL_NODE matches node names only."""

    effect: FaultEffect
    source: str = "*"
    destination: str = "*"
    node: str = "*"
    delay_ticks: int = 0
    active: bool = True
    rule_id: Optional[int] = None

    def __post_init__(self) -> None:
        if self.delay_ticks < 0:
            raise InvalidFaultRule("delay_ticks must be >= 0")
        if self.effect is FaultEffect.DELAY and self.delay_ticks <= 0:
            raise InvalidFaultRule("DELAY requires delay_ticks > 0")

    def matches_pair(self, source: str, destination: str) -> bool:
        if self.effect is FaultEffect.PARTITION:
            return (fnmatchcase(source, self.source) and fnmatchcase(destination, self.destination)) or \
                   (fnmatchcase(destination, self.source) and fnmatchcase(source, self.destination))
        return fnmatchcase(source, self.source) and fnmatchcase(destination, self.destination)

    def matches_node(self, node: str) -> bool:
        return fnmatchcase(node, self.node)


@dataclass
class MessageRecord:
    """One line of the delivery trace.

    ``status`` is the delivery fate for requests (delivered/dropped/failed)
    and the carried status code for delivered responses.
    """

    tick: int
    message_id: int
    source: str
    destination: str
    kind: str
    method: str
    path: str
    status: str

    def line(self) -> str:
        return f"{self.tick}|{self.message_id}|{self.source}|{self.destination}|{self.kind}|{self.path}|{self.status}"

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, separators=(",", ":"))


DELIVERED = "delivered"
DROPPED = "dropped"
FAILED = "failed"

_EV_DELIVER = 0
_EV_TIMER = 1


@dataclass
class _NodeSlot:
    handler: Optional[Callable[[Envelope], None]]


class Simulator:
    """Single-threaded event loop over logical ticks.

    All node and simulator state is mutated only inside :meth:`step`.
    Sends made from within a handler are enqueued and delivered on later
    ticks; base latency is one tick unless a DELAY rule matches.
    """

    def __init__(self, seed: int = 0) -> None:
        self.seed = seed
        self.rng = random.Random(seed)
        self.now = 0
        self.nodes: dict[str, _NodeSlot] = {}
        self.records: list[MessageRecord] = []
        self.sent = 0
        self.delivered = 0
        self.dropped = 0
        self.failed = 0
        self._queue: list[tuple] = []  # (tick, seq, event_type, payload, maintenance)
        self._fault_schedule: list[tuple[int, int, FaultRule]] = []
        self._rules: dict[int, FaultRule] = {}
        self._dead: set[str] = set()
        self._seen_requests: set[int] = set()
        self._timers: dict[int, tuple[Callable[[], None], bool]] = {}
        self._cancelled_timers: set[int] = set()
        self._next_message_id = 1
        self._next_rule_id = 1
        self._next_timer_id = 1
        self._seq = 0
        self._pending_external = 0
        self._ctx_maintenance = False

    # -- nodes ------------------------------------------------------------

    def add_node(self, name: str, handler: Optional[Callable[[Envelope], None]] = None) -> None:
        if name in self.nodes:
            raise SimwireError(f"node already registered: {name}")
        self.nodes[name] = _NodeSlot(handler=handler)

    def node_alive(self, name: str) -> bool:
        return name in self.nodes and name not in self._dead

    # -- sending ----------------------------------------------------------

    def send(self, env: Envelope, maintenance: Optional[bool] = None) -> int:
        """Schedule ``env`` for delivery; returns the assigned message id.

        The envelope's fate is decided here for drop/partition rules and for
        dead or unknown destinations; DELAY rules stretch the latency.
        """
        if env.source not in self.nodes:
            raise UnknownNode(f"unknown source node: {env.source}")
        if env.kind is MessageKind.RESPONSE:
            if env.correlation_id is None or env.correlation_id not in self._seen_requests:
                raise InvalidEnvelope("RESPONSE must correlate to an existing REQUEST")
        mid = self._next_message_id
        self._next_message_id += 1
        env.message_id = mid
        if env.kind is MessageKind.REQUEST:
            self._seen_requests.add(mid)
        self.sent += 1
        if maintenance is None:
            maintenance = self._ctx_maintenance

        if env.source in self._dead:
            # Dead nodes cannot put traffic on the wire.
            self._record(env, DROPPED)
            self.dropped += 1
            return mid
        if env.destination not in self.nodes or env.destination in self._dead:
            self._fail_with_network_error(env, maintenance)
            return mid
        for rule in self._rules.values():
            if not rule.active:
                continue
            if rule.effect in (FaultEffect.DROP, FaultEffect.PARTITION) and \
                    rule.matches_pair(env.source, env.destination):
                self._record(env, DROPPED)
                self.dropped += 1
                return mid
        latency = BASE_LATENCY_TICKS
        for rule in self._rules.values():
            if rule.active and rule.effect is FaultEffect.DELAY and \
                    rule.matches_pair(env.source, env.destination):
                latency += rule.delay_ticks
        self._enqueue(self.now + latency, _EV_DELIVER, env, maintenance)
        return mid

    def set_timer(self, node: str, delay: int, fn: Callable[[], None],
                  maintenance: Optional[bool] = None) -> int:
        """Schedule ``fn`` to run on ``node`` after ``delay`` ticks.

        Timers are scheduler internals, not wire traffic: they never appear
        in the trace and are skipped if the node has been killed.
        """
        if node not in self.nodes:
            raise UnknownNode(f"unknown node: {node}")
        if delay < 1:
            raise SimwireError("timer delay must be >= 1 tick")
        if maintenance is None:
            maintenance = self._ctx_maintenance
        tid = self._next_timer_id
        self._next_timer_id += 1
        self._timers[tid] = (fn, maintenance)
        self._enqueue(self.now + delay, _EV_TIMER, (node, tid), maintenance)
        return tid

    def cancel_timer(self, timer_id: int) -> None:
        entry = self._timers.pop(timer_id, None)
        if entry is None:
            return
        # The queue entry stays behind as a tombstone; release its share of
        # the pending count now so quiescence is not held hostage.
        self._cancelled_timers.add(timer_id)
        if not entry[1]:
            self._pending_external -= 1

    # -- faults -----------------------------------------------------------

    def inject(self, rule: FaultRule) -> int:
        """Activate a fault rule now; already-enqueued deliveries keep the
        latency and drop decisions made when they were scheduled."""
        rid = self._register_rule(rule)
        self._apply_rule(rule)
        return rid

    def clear(self, rule_id: int) -> None:
        rule = self._rules.pop(rule_id, None)
        if rule is None:
            raise UnknownRule(f"no such rule: {rule_id}")
        if rule.effect is FaultEffect.KILL_NODE:
            self._recompute_dead()

    def schedule_fault(self, tick: int, rule: FaultRule) -> int:
        """Register a rule that activates when the clock reaches ``tick``."""
        rid = self._register_rule(rule)
        rule.active = False
        self._seq += 1
        heapq.heappush(self._fault_schedule, (tick, self._seq, ("activate", rule)))
        return rid

    def schedule_revive(self, tick: int, node_pattern: str) -> None:
        """Lift any kill rules matching ``node_pattern`` at ``tick``."""
        self._seq += 1
        heapq.heappush(self._fault_schedule, (tick, self._seq, ("revive", node_pattern)))

    def _register_rule(self, rule: FaultRule) -> int:
        if rule.rule_id is None:
            rule.rule_id = self._next_rule_id
            self._next_rule_id += 1
        if rule.rule_id in self._rules:
            raise InvalidFaultRule(f"duplicate rule id: {rule.rule_id}")
        self._rules[rule.rule_id] = rule
        return rule.rule_id

    def _apply_rule(self, rule: FaultRule) -> None:
        rule.active = True
        if rule.effect is FaultEffect.KILL_NODE:
            for name in self.nodes:
                if rule.matches_node(name):
                    self._dead.add(name)

    def _recompute_dead(self) -> None:
        self._dead = {
            name
            for name in self.nodes
            for rule in self._rules.values()
            if rule.active and rule.effect is FaultEffect.KILL_NODE and rule.matches_node(name)
        }

    def _activate_due_faults(self, up_to_tick: int) -> None:
        while self._fault_schedule and self._fault_schedule[0][0] <= up_to_tick:
            _, _, (action, arg) = heapq.heappop(self._fault_schedule)
            if action == "activate":
                self._apply_rule(arg)
            else:  # revive
                for rule in self._rules.values():
                    if rule.effect is FaultEffect.KILL_NODE and rule.node == arg:
                        rule.active = False
                self._recompute_dead()

    # -- stepping ---------------------------------------------------------

    def step(self) -> list[Envelope]:
        """Advance to the next event tick and deliver everything due there.

        With an empty queue the clock advances one tick. Node handlers run
        synchronously; their sends land on later ticks.
        """
        if not self._queue:
            self.now += 1
            self._activate_due_faults(self.now)
            return []
        tick = self._queue[0][0]
        self._activate_due_faults(tick)
        self.now = tick
        delivered: list[Envelope] = []
        while self._queue and self._queue[0][0] == tick:
            _, _, ev_type, payload, maintenance = heapq.heappop(self._queue)
            if ev_type == _EV_TIMER:
                node, tid = payload
                if tid in self._cancelled_timers:
                    self._cancelled_timers.discard(tid)
                    continue
                if not maintenance:
                    self._pending_external -= 1
                entry = self._timers.pop(tid, None)
                if entry is not None and self.node_alive(node):
                    self._run_in_context(entry[0], maintenance)
                continue
            if not maintenance:
                self._pending_external -= 1
            env: Envelope = payload
            if env.destination not in self.nodes or env.destination in self._dead:
                self._fail_with_network_error(env, maintenance)
                continue
            status = env.status if env.kind is MessageKind.RESPONSE and env.status else DELIVERED
            self._record(env, status)
            self.delivered += 1
            delivered.append(env)
            handler = self.nodes[env.destination].handler
            if handler is not None:
                self._run_in_context(lambda e=env, h=handler: h(e), maintenance)
        return delivered

    def advance_to(self, tick: int) -> None:
        """Run any earlier events, then move the clock to ``tick``."""
        while self._queue and self._queue[0][0] < tick:
            self.step()
        if tick > self.now:
            self.now = tick
        self._activate_due_faults(self.now)

    def run_until_idle(self, budget: int = 10_000) -> bool:
        """Step until no non-maintenance work is pending. Returns False if
        the tick budget ran out first."""
        deadline = self.now + budget
        while self.pending_external > 0:
            if self.now >= deadline:
                return False
            self.step()
        return True

    @property
    def pending_external(self) -> int:
        """Queued events that are not periodic maintenance traffic."""
        return self._pending_external

    @property
    def queue_depth(self) -> int:
        return len(self._queue)

    def next_event_tick(self) -> Optional[int]:
        return self._queue[0][0] if self._queue else None

    # -- internals --------------------------------------------------------

    def _enqueue(self, tick: int, ev_type: int, payload, maintenance: bool) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (tick, self._seq, ev_type, payload, maintenance))
        if not maintenance:
            self._pending_external += 1

    def _run_in_context(self, fn: Callable[[], None], maintenance: bool) -> None:
        prev = self._ctx_maintenance
        self._ctx_maintenance = maintenance
        try:
            fn()
        finally:
            self._ctx_maintenance = prev

    def _fail_with_network_error(self, env: Envelope, maintenance: bool) -> None:
        self._record(env, FAILED)
        self.failed += 1
        if env.kind is not MessageKind.REQUEST:
            return
        if env.source not in self.nodes or env.source in self._dead:
            return
        reply = Envelope.response(env, NETWORK_ERROR_STATUS, body={"error": "NetworkError"})
        reply.message_id = self._next_message_id
        self._next_message_id += 1
        self.sent += 1
        self._enqueue(self.now + BASE_LATENCY_TICKS, _EV_DELIVER, reply, maintenance)

    def _record(self, env: Envelope, status: str) -> None:
        self.records.append(MessageRecord(
            tick=self.now, message_id=env.message_id or 0, source=env.source,
            destination=env.destination, kind=env.kind.value, method=env.method,
            path=env.path, status=status))

    # -- trace export -----------------------------------------------------

    def trace_lines(self) -> list[str]:
        return [r.line() for r in self.records]

    def write_trace(self, path: str, fmt: str = "text") -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for record in self.records:
                fh.write(record.to_json() if fmt == "ndjson" else record.line())
                fh.write("\n")


# -- fault scripts ---------------------------------------------------------

def parse_fault_script(text: str) -> list[tuple[int, str, FaultRule | str]]:
    """Parse a line-based fault script: ``tick action args``.

    Actions: ``kill <node>``, ``revive <node>``, ``drop <src> <dst>``,
    ``partition <a> <b>``, ``delay <src> <dst> <ticks>``. ``revive`` undoes
    the kill rules whose node pattern matches exactly.
    """
    out: list[tuple[int, str, FaultRule | str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            tick = int(parts[0])
            action = parts[1]
            if action == "kill":
                entry: FaultRule | str = FaultRule(FaultEffect.KILL_NODE, node=parts[2])
            elif action == "revive":
                entry = parts[2]
            elif action == "drop":
                entry = FaultRule(FaultEffect.DROP, source=parts[2], destination=parts[3])
            elif action == "partition":
                entry = FaultRule(FaultEffect.PARTITION, source=parts[2], destination=parts[3])
            elif action == "delay":
                entry = FaultRule(FaultEffect.DELAY, source=parts[2], destination=parts[3],
                                  delay_ticks=int(parts[4]))
            else:
                raise ValueError(f"unknown action {action!r}")
            if len(parts) > (5 if action == "delay" else 4 if action in ("drop", "partition") else 3):
                raise ValueError("trailing arguments")
        except (IndexError, ValueError, InvalidFaultRule) as exc:
            raise FaultScriptError(f"line {lineno}: {exc}") from exc
        out.append((tick, action, entry))
    return out


def apply_fault_schedule(sim: Simulator, schedule: list[tuple[int, str, FaultRule | str]]) -> None:
    """Install a parsed fault script onto the simulator's clock."""
    for tick, action, entry in schedule:
        if action == "revive":
            sim.schedule_revive(tick, entry)  # type: ignore[arg-type]
        else:
            sim.schedule_fault(tick, entry)  # type: ignore[arg-type]


def canonical_json(body: Body) -> str:
    """Stable serialization for bodies: sorted keys, no whitespace."""
    return json.dumps(body, sort_keys=True, separators=(",", ":"))
