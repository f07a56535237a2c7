"""Edge routing: one public entry point in front of the internal services.

The gateway owns a prefix-matched route table (longest match wins, always
on whole path segments) and forwards requests to the owning service via
its client, relaying the upstream status and body back to the caller.
Unreachable upstreams surface as 503 so external callers never see
internal failure detail.
"""

from __future__ import annotations

from dataclasses import dataclass

from .chassis import CallResult, Request, ServiceNode, relay_result
from .simwire import Body, Simulator

SERVICE_NAME = "Gateway"

UPSTREAM_DEADLINE_TICKS = 40

ROUTE_KEY_PREFIX = "route."


class GatewayError(Exception):
    pass


class DuplicatePrefix(GatewayError):
    pass


class UnknownRule(GatewayError):
    pass


class InvalidRoute(GatewayError):
    pass


@dataclass(frozen=True)
class RouteRule:
    prefix: str
    service: str
    strip: bool

    def __post_init__(self) -> None:
        if not self.prefix.startswith("/") or (self.prefix != "/" and self.prefix.endswith("/")):
            raise InvalidRoute(f"bad prefix: {self.prefix!r}")
        if not self.service:
            raise InvalidRoute("empty service")


def _segments(path: str) -> list[str]:
    return [p for p in path.split("/") if p]


class RouteTable:
    """Ordered prefix rules with longest-match lookup and strip rewriting."""

    def __init__(self) -> None:
        self._rules: dict[str, RouteRule] = {}
        self.version = 0

    def add_route(self, rule: RouteRule) -> None:
        if rule.prefix in self._rules:
            raise DuplicatePrefix(rule.prefix)
        self._rules[rule.prefix] = rule
        self.version += 1

    def remove_route(self, prefix: str) -> None:
        if prefix not in self._rules:
            raise UnknownRule(prefix)
        del self._rules[prefix]
        self.version += 1

    def rules(self) -> list[RouteRule]:
        return [self._rules[p] for p in sorted(self._rules)]

    def match(self, path: str) -> RouteRule | None:
        """Longest rule whose prefix covers whole leading segments of
        ``path``; /api/dev never matches a /api/developers request."""
        parts = _segments(path)
        best: RouteRule | None = None
        best_len = -1
        for rule in self._rules.values():
            pre = _segments(rule.prefix)
            if len(pre) <= len(parts) and parts[:len(pre)] == pre and len(pre) > best_len:
                best = rule
                best_len = len(pre)
        return best

    def rewrite(self, path: str, rule: RouteRule) -> str:
        """With strip on, drop the prefix's parent directories so the last
        prefix segment becomes the path root: /api/developers/42 forwarded
        as /developers/42."""
        if not rule.strip:
            return path
        pre = _segments(rule.prefix)
        parts = _segments(path)
        return "/" + "/".join(pre[-1:] + parts[len(pre):])

    @classmethod
    def from_config_entries(cls, entries: dict[str, str]) -> "RouteTable":
        """Build a table from ``route.N`` config keys, lowest N first.
        Each value is ``prefix|service|strip`` with strip as 0 or 1."""
        table = cls()
        keyed: list[tuple[int, str]] = []
        for key, value in entries.items():
            if not key.startswith(ROUTE_KEY_PREFIX):
                continue
            try:
                keyed.append((int(key[len(ROUTE_KEY_PREFIX):]), value))
            except ValueError as exc:
                raise InvalidRoute(f"bad route key: {key}") from exc
        for _, value in sorted(keyed):
            parts = value.split("|")
            if len(parts) != 3 or parts[2] not in ("0", "1"):
                raise InvalidRoute(f"bad route value: {value!r}")
            table.add_route(RouteRule(parts[0], parts[1], parts[2] == "1"))
        return table


class Gateway(ServiceNode):
    """Edge node: everything but its own /refresh is proxied by prefix."""

    def __init__(self, sim: Simulator, node_id: str = "gateway") -> None:
        super().__init__(sim, node_id, SERVICE_NAME)
        self.table = RouteTable()

    def on_config_applied(self) -> None:
        try:
            self.table = RouteTable.from_config_entries(self.config.entries)
        except (InvalidRoute, DuplicatePrefix):
            pass  # keep serving with the last good table

    def dispatch(self, req: Request) -> None:
        if req.method == "POST" and req.path == "/refresh":
            super().dispatch(req)
            return
        rule = self.table.match(req.path)
        if rule is None:
            req.reply("404", {"error": "NoRoute"})
            return
        assert self.client is not None, "gateway needs a client"
        inner_path = self.table.rewrite(req.path, rule)

        def relay(result: CallResult) -> None:
            relay_result(req, result)

        self.client.call(rule.service, req.method, inner_path, req.body,
                         on_result=relay, deadline=UPSTREAM_DEADLINE_TICKS)
