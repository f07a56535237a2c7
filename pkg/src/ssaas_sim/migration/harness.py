"""Workload driver: replays a scripted request stream against a topology.

Workload files are line based, one request per line::

    tick|client|METHOD|path|body

* ``tick`` is relative to the settled topology (tick 0 is the first instant
  after startup traffic has drained) and must be non-decreasing.
* ``client`` names the sending node; ``client`` is created with every
  topology, other names (by convention ``admin``) are created on first use.
* ``body`` is a JSON document, or empty for no body.

Blank lines and ``#`` comments are skipped. Fault scripts ride the same
relative clock: a fault at tick 40 activates before any workload line at
tick 40 is sent.

The admin client talks to the infrastructure nodes directly: paths under
``/config`` go to the configuration server, paths under ``/registry`` to the
registry. Everything else enters the system the way ordinary client traffic
does for the topology's stage: through the gateway from stage 3 on, else
routed locally against the same prefix table the gateway would use.
"""

from __future__ import annotations

import json
from typing import Optional

from ..chassis import (
    UPSTREAM_UNAVAILABLE_BODY,
    UPSTREAM_UNAVAILABLE_STATUS,
    CallResult,
    CallStatus,
    ServiceNode,
)
from ..simwire import Body, FaultRule, apply_fault_schedule
from .stages import CLIENT_DEADLINE_TICKS, SystemHandle, wire_client
from .traces import TraceEntry

WORKLOAD_METHODS = ("GET", "POST", "PUT", "DELETE")
DEFAULT_BUDGET_TICKS = 10_000

_ADMIN_TARGETS = (("/config", "confsvc"), ("/registry", "registry"))


class WorkloadError(Exception):
    """A workload file could not be parsed."""


class BudgetExceeded(Exception):
    """The system did not go quiescent within the tick budget."""


class WorkloadLine:
    __slots__ = ("tick", "client", "method", "path", "body", "line_no")

    def __init__(self, tick: int, client: str, method: str, path: str,
                 body: Body, line_no: int = 0) -> None:
        self.tick = tick
        self.client = client
        self.method = method
        self.path = path
        self.body = body
        self.line_no = line_no


def parse_workload(text: str) -> list[WorkloadLine]:
    lines: list[WorkloadLine] = []
    last_tick = 0
    for line_no, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split("|", 4)
        if len(parts) != 5:
            raise WorkloadError(f"line {line_no}: expected 5 |-separated fields")
        tick_s, client, method, path, body_s = parts
        try:
            tick = int(tick_s)
        except ValueError:
            raise WorkloadError(f"line {line_no}: bad tick {tick_s!r}") from None
        if tick < 0:
            raise WorkloadError(f"line {line_no}: negative tick")
        if tick < last_tick:
            raise WorkloadError(f"line {line_no}: ticks must be non-decreasing")
        last_tick = tick
        if not client:
            raise WorkloadError(f"line {line_no}: empty client")
        if method not in WORKLOAD_METHODS:
            raise WorkloadError(f"line {line_no}: unknown method {method!r}")
        if not path.startswith("/"):
            raise WorkloadError(f"line {line_no}: path must start with /")
        if body_s:
            try:
                body = json.loads(body_s)
            except json.JSONDecodeError as exc:
                raise WorkloadError(f"line {line_no}: bad body: {exc}") from None
        else:
            body = None
        lines.append(WorkloadLine(tick, client, method, path, body, line_no))
    return lines


def run_workload(handle: SystemHandle, lines: list[WorkloadLine],
                 faults: Optional[list[tuple[int, str, FaultRule | str]]] = None,
                 budget: int = DEFAULT_BUDGET_TICKS) -> list[TraceEntry]:
    """Replay a workload, returning one trace entry per line, in line order.

    Raises BudgetExceeded if the system is still busy ``budget`` ticks after
    the last line was sent.
    """
    sim = handle.sim
    base = handle.settle_tick
    if faults:
        apply_fault_schedule(sim, [(base + tick, action, entry)
                                   for tick, action, entry in faults])
    entries: list[Optional[TraceEntry]] = [None] * len(lines)
    for i, line in enumerate(lines):
        sim.advance_to(base + line.tick)
        _send(handle, wire_client(handle, line.client), line, i, entries)
    if not sim.run_until_idle(budget=budget):
        raise BudgetExceeded(f"still busy after {budget} ticks")
    done = [e for e in entries if e is not None]
    assert len(done) == len(lines), "every request must complete or fail"
    return done


def _send(handle: SystemHandle, node: ServiceNode, line: WorkloadLine,
          seq: int, entries: list[Optional[TraceEntry]]) -> None:
    sim = handle.sim
    sent_tick = sim.now

    def finish(result: CallResult) -> None:
        if result.status in (CallStatus.FAST_FAIL, CallStatus.TIMEOUT):
            status, body = UPSTREAM_UNAVAILABLE_STATUS, dict(UPSTREAM_UNAVAILABLE_BODY)
        else:
            status, body = result.remote_status or "", result.body
        entries[seq] = TraceEntry(
            seq=seq, client=line.client, method=line.method, path=line.path,
            request_body=line.body, sent_tick=sent_tick, status=status,
            response_body=body, done_tick=sim.now)

    client = node.client
    assert client is not None
    admin_target = _admin_target(line.path)
    if admin_target is not None:
        client.call_node(admin_target, line.method, line.path, line.body,
                         finish, deadline=CLIENT_DEADLINE_TICKS)
    elif handle.stage >= 3:
        client.call_node("gateway", line.method, line.path, line.body,
                         finish, deadline=CLIENT_DEADLINE_TICKS)
    else:
        rule = handle.client_router.match(line.path)
        if rule is None:
            finish(CallResult(CallStatus.REMOTE_ERROR, {"error": "NoRoute"},
                              remote_status="404"))
            return
        client.call(rule.service, line.method,
                    handle.client_router.rewrite(line.path, rule), line.body,
                    finish, deadline=CLIENT_DEADLINE_TICKS)


def _admin_target(path: str) -> Optional[str]:
    for prefix, node_id in _ADMIN_TARGETS:
        if path == prefix or path.startswith(prefix + "/"):
            return node_id
    return None
