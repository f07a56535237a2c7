"""Transport behavior: latency, ordering, faults, conservation, determinism."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssaas_sim.simwire import (
    DELIVERED,
    DROPPED,
    FAILED,
    NETWORK_ERROR_STATUS,
    Envelope,
    FaultEffect,
    FaultRule,
    FaultScriptError,
    InvalidEnvelope,
    InvalidFaultRule,
    MessageKind,
    Simulator,
    UnknownNode,
    UnknownRule,
    apply_fault_schedule,
    parse_fault_script,
)


def make_sim(*nodes: str, seed: int = 0) -> Simulator:
    sim = Simulator(seed=seed)
    for n in nodes:
        sim.add_node(n)
    return sim


def drain(sim: Simulator, max_steps: int = 50) -> list[Envelope]:
    got: list[Envelope] = []
    for _ in range(max_steps):
        if sim.queue_depth == 0:
            break
        got.extend(sim.step())
    return got


class TestSendAndStep:
    def test_base_latency_is_one_tick(self):
        sim = make_sim("a", "b")
        sim.advance_to(5)
        sim.send(Envelope.request("a", "b", "/x"))
        delivered = sim.step()
        assert sim.now == 6
        assert [e.path for e in delivered] == ["/x"]

    def test_fifo_within_tick(self):
        sim = make_sim("a", "b")
        for i in range(4):
            sim.send(Envelope.request("a", "b", f"/m{i}"))
        delivered = sim.step()
        assert [e.path for e in delivered] == ["/m0", "/m1", "/m2", "/m3"]

    def test_message_ids_strictly_increase(self):
        sim = make_sim("a", "b")
        ids = [sim.send(Envelope.request("a", "b", "/x")) for _ in range(5)]
        assert ids == sorted(ids)
        assert len(set(ids)) == 5

    def test_empty_step_advances_clock(self):
        sim = make_sim("a")
        assert sim.step() == []
        assert sim.now == 1

    def test_unknown_source_rejected(self):
        sim = make_sim("a")
        with pytest.raises(UnknownNode):
            sim.send(Envelope.request("ghost", "a", "/x"))

    def test_response_requires_known_correlation(self):
        sim = make_sim("a", "b")
        bogus = Envelope(source="a", destination="b", kind=MessageKind.RESPONSE,
                         path="/x", correlation_id=999)
        with pytest.raises(InvalidEnvelope):
            sim.send(bogus)

    def test_handler_send_lands_next_tick(self):
        sim = Simulator()
        order: list[tuple[int, str]] = []

        def b_handler(env: Envelope) -> None:
            order.append((sim.now, "b got " + env.path))
            sim.send(Envelope.response(env, "200"))

        sim.add_node("a", lambda env: order.append((sim.now, "a got " + (env.status or ""))))
        sim.add_node("b", b_handler)
        sim.send(Envelope.request("a", "b", "/ping"))
        drain(sim)
        assert order == [(1, "b got /ping"), (2, "a got 200")]


class TestFaults:
    def test_drop_rule_drops_matching(self):
        sim = make_sim("a", "b")
        sim.inject(FaultRule(FaultEffect.DROP, source="a", destination="b"))
        sim.send(Envelope.request("a", "b", "/x"))
        assert drain(sim) == []
        assert sim.dropped == 1
        assert sim.records[-1].status == DROPPED

    def test_drop_is_directional(self):
        sim = make_sim("a", "b")
        sim.inject(FaultRule(FaultEffect.DROP, source="a", destination="b"))
        sim.send(Envelope.request("b", "a", "/back"))
        assert [e.path for e in drain(sim)] == ["/back"]

    def test_partition_is_bidirectional(self):
        sim = make_sim("a", "b")
        sim.inject(FaultRule(FaultEffect.PARTITION, source="a", destination="b"))
        sim.send(Envelope.request("a", "b", "/x"))
        sim.send(Envelope.request("b", "a", "/y"))
        assert drain(sim) == []
        assert sim.dropped == 2

    def test_delay_adds_to_base_latency(self):
        # DELAY of 10 injected at t=0, send at t=0: delivery at t=11.
        sim = make_sim("a", "b")
        sim.inject(FaultRule(FaultEffect.DELAY, source="a", destination="b", delay_ticks=10))
        sim.send(Envelope.request("a", "b", "/slow"))
        delivered = sim.step()
        assert sim.now == 11
        assert [e.path for e in delivered] == ["/slow"]

    def test_overlapping_delays_sum(self):
        sim = make_sim("a", "b")
        sim.inject(FaultRule(FaultEffect.DELAY, source="a", destination="*", delay_ticks=3))
        sim.inject(FaultRule(FaultEffect.DELAY, source="*", destination="b", delay_ticks=4))
        sim.send(Envelope.request("a", "b", "/x"))
        sim.step()
        assert sim.now == 8  # 1 + 3 + 4

    def test_delay_requires_positive_ticks(self):
        with pytest.raises(InvalidFaultRule):
            FaultRule(FaultEffect.DELAY, delay_ticks=0)

    def test_clear_restores_traffic(self):
        sim = make_sim("a", "b")
        rid = sim.inject(FaultRule(FaultEffect.DROP, source="a", destination="b"))
        sim.send(Envelope.request("a", "b", "/1"))
        sim.clear(rid)
        sim.send(Envelope.request("a", "b", "/2"))
        assert [e.path for e in drain(sim)] == ["/2"]

    def test_clear_unknown_rule(self):
        sim = make_sim("a")
        with pytest.raises(UnknownRule):
            sim.clear(42)

    def test_already_enqueued_delivery_unaffected_by_new_drop(self):
        sim = make_sim("a", "b")
        sim.send(Envelope.request("a", "b", "/x"))
        sim.inject(FaultRule(FaultEffect.DROP, source="a", destination="b"))
        assert [e.path for e in drain(sim)] == ["/x"]

    def test_kill_node_fails_sends_with_network_error(self):
        # Send to a killed node: sender gets a network-error response one
        # tick later, the request counts as failed.
        sim = Simulator()
        got: list[str] = []
        sim.add_node("a", lambda env: got.append(env.status or ""))
        sim.add_node("b")
        sim.inject(FaultRule(FaultEffect.KILL_NODE, node="b"))
        sim.send(Envelope.request("a", "b", "/x"))
        sim.step()
        assert got == [NETWORK_ERROR_STATUS]
        assert sim.failed == 1

    def test_kill_mid_flight_fails_at_delivery(self):
        sim = Simulator()
        got: list[str] = []
        sim.add_node("a", lambda env: got.append(env.status or ""))
        sim.add_node("b", lambda env: got.append("b saw " + env.path))
        sim.send(Envelope.request("a", "b", "/x"))
        sim.inject(FaultRule(FaultEffect.KILL_NODE, node="b"))
        drain(sim)
        assert got == [NETWORK_ERROR_STATUS]
        assert sim.failed == 1

    def test_killed_node_sends_are_dropped(self):
        sim = make_sim("a", "b")
        sim.inject(FaultRule(FaultEffect.KILL_NODE, node="a"))
        sim.send(Envelope.request("a", "b", "/x"))
        assert drain(sim) == []
        assert sim.dropped == 1

    def test_clear_kill_revives(self):
        sim = make_sim("a", "b")
        rid = sim.inject(FaultRule(FaultEffect.KILL_NODE, node="b"))
        assert not sim.node_alive("b")
        sim.clear(rid)
        assert sim.node_alive("b")
        sim.send(Envelope.request("a", "b", "/x"))
        assert [e.path for e in drain(sim)] == ["/x"]

    def test_scheduled_fault_activates_on_time(self):
        sim = make_sim("a", "b")
        sim.schedule_fault(10, FaultRule(FaultEffect.KILL_NODE, node="b"))
        sim.advance_to(5)
        assert sim.node_alive("b")
        sim.advance_to(10)
        assert not sim.node_alive("b")

    def test_timer_fires_and_is_not_traced(self):
        sim = make_sim("a")
        fired: list[int] = []
        sim.set_timer("a", 3, lambda: fired.append(sim.now))
        drain(sim)
        assert fired == [3]
        assert sim.records == []

    def test_timer_skipped_on_dead_node(self):
        sim = make_sim("a")
        fired: list[int] = []
        sim.set_timer("a", 3, lambda: fired.append(sim.now))
        sim.inject(FaultRule(FaultEffect.KILL_NODE, node="a"))
        drain(sim)
        assert fired == []


class TestConservation:
    """Every sent message reaches exactly one fate."""

    @given(st.lists(st.tuples(st.sampled_from(["a", "b", "c"]),
                              st.sampled_from(["a", "b", "c"]),
                              st.integers(min_value=0, max_value=3)),
                    max_size=60),
           st.integers(min_value=0, max_value=2**31))
    @settings(max_examples=60, deadline=None)
    def test_fates_partition_sends(self, sends, seed):
        sim = make_sim("a", "b", "c", seed=seed)
        rng = random.Random(seed)
        for src, dst, gap in sends:
            sim.advance_to(sim.now + gap)
            if rng.random() < 0.15:
                effect = rng.choice([FaultEffect.DROP, FaultEffect.KILL_NODE])
                if effect is FaultEffect.KILL_NODE:
                    sim.inject(FaultRule(effect, node=rng.choice(["a", "b", "c"])))
                else:
                    sim.inject(FaultRule(effect, source=src, destination=dst))
            if not sim.node_alive(src):
                continue
            sim.send(Envelope.request(src, dst, "/p"))
        drain(sim, max_steps=500)
        assert sim.delivered + sim.dropped + sim.failed == sim.sent

    def test_counts_match_record_statuses(self):
        sim = make_sim("a", "b")
        sim.inject(FaultRule(FaultEffect.DROP, source="a", destination="b"))
        sim.send(Envelope.request("a", "b", "/dropped"))
        sim.send(Envelope.request("b", "a", "/ok"))
        drain(sim)
        by_status = {}
        for r in sim.records:
            by_status[r.status] = by_status.get(r.status, 0) + 1
        assert by_status.get(DROPPED, 0) == sim.dropped
        assert by_status.get(DELIVERED, 0) == sim.delivered


class TestDeterminism:
    def _run(self, seed: int) -> list[str]:
        sim = make_sim("a", "b", "c", seed=seed)
        sim.nodes["b"].handler = lambda env: sim.send(Envelope.response(env, "200")) \
            if env.kind is MessageKind.REQUEST else None
        for i in range(10):
            sim.send(Envelope.request("a", "b", f"/r{i}"))
            if i == 4:
                sim.inject(FaultRule(FaultEffect.DELAY, source="b", destination="a",
                                     delay_ticks=2))
            sim.step()
        drain(sim)
        return sim.trace_lines()

    def test_same_seed_same_trace(self):
        assert self._run(7) == self._run(7)

    def test_trace_line_format(self):
        sim = make_sim("a", "b")
        sim.send(Envelope.request("a", "b", "/x", method="POST"))
        drain(sim)
        line = sim.trace_lines()[0]
        fields = line.split("|")
        assert len(fields) == 7
        assert fields[4] == "REQUEST"
        assert fields[5] == "/x"
        assert fields[6] == DELIVERED


class TestCausality:
    def test_response_never_precedes_request_delivery(self):
        sim = Simulator()
        events: list[tuple[int, str, str]] = []

        def server(env: Envelope) -> None:
            events.append((sim.now, "req", env.path))
            sim.send(Envelope.response(env, "200"))

        sim.add_node("client", lambda env: events.append((sim.now, "resp", env.path)))
        sim.add_node("server", server)
        for i in range(5):
            sim.send(Envelope.request("client", "server", f"/c{i}"))
            sim.step()
        drain(sim)
        seen_req = {}
        for tick, kind, path in events:
            if kind == "req":
                seen_req[path] = tick
            else:
                assert path in seen_req and tick > seen_req[path]


class TestFaultScript:
    def test_parse_and_apply(self):
        text = """
        # resilience scenario
        40 kill chat-1
        55 revive chat-1
        10 drop a b
        12 partition a c
        20 delay a b 5
        """
        schedule = parse_fault_script(text)
        assert [(t, a) for t, a, _ in schedule] == [
            (40, "kill"), (55, "revive"), (10, "drop"), (12, "partition"), (20, "delay")]
        sim = make_sim("a", "b", "c", "chat-1")
        apply_fault_schedule(sim, schedule)
        sim.advance_to(41)
        assert not sim.node_alive("chat-1")
        sim.advance_to(56)
        assert sim.node_alive("chat-1")

    def test_parse_rejects_garbage(self):
        with pytest.raises(FaultScriptError):
            parse_fault_script("40 explode chat-1")
        with pytest.raises(FaultScriptError):
            parse_fault_script("nan kill chat-1")
        with pytest.raises(FaultScriptError):
            parse_fault_script("5 delay a b 0")


class TestReferenceQueueOracle:
    """Replay random scenarios against a plain sorted-list scheduler."""

    @given(st.lists(st.tuples(st.integers(min_value=0, max_value=5),
                              st.sampled_from(["a", "b"]),
                              st.sampled_from(["a", "b"])),
                    min_size=1, max_size=40))
    @settings(max_examples=50, deadline=None)
    def test_delivery_order_matches_sorted_replay(self, plan):
        sim = make_sim("a", "b")
        expected: list[tuple[int, int, str]] = []  # (deliver_tick, send_index, path)
        for idx, (gap, src, dst) in enumerate(plan):
            sim.advance_to(sim.now + gap)
            path = f"/m{idx}"
            sim.send(Envelope.request(src, dst, path))
            expected.append((sim.now + 1, idx, path))
        drain(sim, max_steps=200)
        got = [(r.tick, r.path) for r in sim.records]
        expected.sort()
        assert [(t, p) for t, _, p in expected] == got
