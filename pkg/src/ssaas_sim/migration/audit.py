"""Data-ownership audit over wire traffic.

Each persistent entity has exactly one owning service per stage; every
delivered write (POST, PUT, DELETE) whose path names an entity must land on
that owner. The audit scans a run's message records and reports any write
that reached some other service, which is how split-phase regressions (two
services quietly writing the same data) get caught.

Stage 0 is a single deployable: there is no wire between components, so the
audit is not applicable there.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from ..simwire import DELIVERED, MessageKind, MessageRecord

WRITE_METHODS = ("POST", "PUT", "DELETE")

ENTITY_DEVELOPER = "Developer"
ENTITY_PROJECT_SCHEMA = "ProjectSchema"
ENTITY_SERVER = "ServerResource"
ENTITY_CHAT = "ChatInstance"
ENTITY_CONTENT = "ContentRecord"

AUDIT_OK = "OK"
AUDIT_VIOLATIONS = "VIOLATIONS"
AUDIT_NOT_APPLICABLE = "NOT_APPLICABLE"


def classify_write(path: str, stage: int) -> Optional[str]:
    """Name the entity a write path touches, or None for paths that carry
    no entity data (use-case surfaces, infrastructure traffic)."""
    parts = [p for p in path.split("/") if p]
    if not parts:
        return None
    root = parts[0]
    if root == "schema":
        sub = parts[1] if len(parts) > 1 else ""
        if sub == "developers":
            return ENTITY_DEVELOPER
        if sub == "projects":
            return ENTITY_PROJECT_SCHEMA
        return None
    if root == "resources":
        return ENTITY_SERVER
    if root == "chat":
        return ENTITY_CHAT
    if root == "content":
        return ENTITY_CONTENT
    if root == "developers":
        # Before the developer entity moves out it lives behind /schema, and
        # /developers is only the use-case surface.
        return ENTITY_DEVELOPER if stage >= 6 else None
    return None


def expected_owner(entity: str, stage: int) -> str:
    if entity == ENTITY_DEVELOPER:
        return "DeveloperInfoServices" if stage >= 6 else "DeveloperData"
    if entity == ENTITY_PROJECT_SCHEMA:
        return "DeveloperData"
    if entity == ENTITY_SERVER:
        return "ResourceManager" if stage >= 5 else "DeveloperData"
    if entity == ENTITY_CHAT:
        return "ChatServices"
    if entity == ENTITY_CONTENT:
        return "ContentServices"
    raise ValueError(f"unknown entity: {entity}")


@dataclass(frozen=True)
class Violation:
    tick: int
    message_id: int
    source: str
    destination: str
    method: str
    path: str
    entity: str
    expected: str
    actual: str

    def line(self) -> str:
        return (f"violation|{self.tick}|{self.method}|{self.path}"
                f"|{self.source}->{self.destination}|{self.entity}"
                f"|expected={self.expected}|actual={self.actual}")


@dataclass
class AuditReport:
    stage: int
    status: str
    writes_checked: int = 0
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status != AUDIT_VIOLATIONS

    def lines(self) -> list[str]:
        head = (f"audit|stage={self.stage}|status={self.status}"
                f"|writes={self.writes_checked}|violations={len(self.violations)}")
        return [head] + [v.line() for v in self.violations]


def audit_ownership(records: Iterable[MessageRecord], stage: int,
                    node_services: dict[str, str]) -> AuditReport:
    """Check every delivered entity write against the stage's owner map.

    ``node_services`` maps node ids to the service each node runs, normally
    ``SystemHandle.node_services()``.
    """
    if stage == 0:
        return AuditReport(stage=stage, status=AUDIT_NOT_APPLICABLE)
    report = AuditReport(stage=stage, status=AUDIT_OK)
    for rec in records:
        if rec.kind != MessageKind.REQUEST.value or rec.status != DELIVERED:
            continue
        if rec.method not in WRITE_METHODS:
            continue
        entity = classify_write(rec.path, stage)
        if entity is None:
            continue
        report.writes_checked += 1
        owner = expected_owner(entity, stage)
        actual = node_services.get(rec.destination, rec.destination)
        if actual != owner:
            report.violations.append(Violation(
                tick=rec.tick, message_id=rec.message_id, source=rec.source,
                destination=rec.destination, method=rec.method, path=rec.path,
                entity=entity, expected=owner, actual=actual))
    if report.violations:
        report.status = AUDIT_VIOLATIONS
    return report
