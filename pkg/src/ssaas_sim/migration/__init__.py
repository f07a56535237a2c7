"""Stage topologies, the workload harness, trace comparison, and the
data-ownership audit."""

from .audit import (
    AUDIT_NOT_APPLICABLE,
    AUDIT_OK,
    AUDIT_VIOLATIONS,
    AuditReport,
    Violation,
    audit_ownership,
    classify_write,
    expected_owner,
)
from .harness import (
    BudgetExceeded,
    DEFAULT_BUDGET_TICKS,
    WorkloadError,
    WorkloadLine,
    parse_workload,
    run_workload,
)
from .stages import (
    FIRST_STAGE,
    LAST_STAGE,
    STAGES,
    StageTopology,
    Stores,
    SystemHandle,
    UnknownStage,
    build_stage,
    route_entries,
    wire_client,
)
from .traces import (
    FORMATS,
    NDJSON_FORMAT,
    TEXT_FORMAT,
    TraceDiff,
    TraceEntry,
    TraceFormatError,
    compare_traces,
    normalize_trace,
    parse_trace,
    serialize_trace,
)

__all__ = [
    "AUDIT_NOT_APPLICABLE",
    "AUDIT_OK",
    "AUDIT_VIOLATIONS",
    "AuditReport",
    "BudgetExceeded",
    "DEFAULT_BUDGET_TICKS",
    "FIRST_STAGE",
    "FORMATS",
    "LAST_STAGE",
    "NDJSON_FORMAT",
    "STAGES",
    "StageTopology",
    "Stores",
    "SystemHandle",
    "TEXT_FORMAT",
    "TraceDiff",
    "TraceEntry",
    "TraceFormatError",
    "UnknownStage",
    "Violation",
    "WorkloadError",
    "WorkloadLine",
    "audit_ownership",
    "build_stage",
    "classify_write",
    "compare_traces",
    "expected_owner",
    "normalize_trace",
    "parse_trace",
    "parse_workload",
    "route_entries",
    "run_workload",
    "serialize_trace",
    "wire_client",
]
