import dataclasses

import pytest
from hypothesis import given, settings, strategies as st

from socketstore import behaviors as bh
from socketstore.errors import (
    AllocationFailed,
    DelegationRefused,
    InvalidSession,
    Unauthorized,
    UnknownParameterization,
)
from socketstore.proxy import EWMA_ALPHA, PoolPolicy

from conftest import Stack, descriptor, publish

SEC = 1000


def _open(stack, key="m", now=0, ip="10.0.0.3", sink=None, ent=None):
    ent = ent or stack.registry.purchase("app", key)
    return stack.proxy.open_session(ent, key, f"{key}.default", stack.dst(ip), now=now, src="A", sink=sink).sso_id


@pytest.fixture
def relay(stack):
    publish(stack.registry, descriptor("m"))
    stack.echo()
    return stack


def test_first_open_allocates_one_path(relay):
    sso = _open(relay)
    assert relay.proxy.instance(sso).pool.get("main").nodes == ("A", "B", "C")
    assert relay.network.allocation_count() == 1
    assert relay.proxy.constructions[("m", "m.default")] == 1


def test_open_preconditions(relay):
    ent = relay.registry.purchase("app", "m")
    with pytest.raises(UnknownParameterization):
        relay.proxy.open_session(ent, "m", "nonexistent", relay.dst(), src="A")
    with pytest.raises(Unauthorized):
        relay.proxy.open_session(dataclasses.replace(ent, app_id="other"), "m", "m.default", relay.dst(), src="A")
    with pytest.raises(AllocationFailed):
        relay.proxy.open_session(ent, "m", "m.default", relay.dst("10.9.9.9"), src="A")
    for lid in ("ac", "bc"):
        relay.network.set_link_state(lid, {"up": False})
    with pytest.raises(AllocationFailed):
        relay.proxy.open_session(ent, "m", "m.default", relay.dst(), src="A")
    assert relay.network.allocation_count() == 0


def test_five_opens_in_window_pool_on_close(relay):
    ids = [_open(relay, now=t * SEC) for t in (0, 15, 30, 45, 60)]
    assert relay.proxy.popularity(("m", "m.default"), 60 * SEC) == 5
    assert relay.proxy.close_session(ids[0], now=60 * SEC) == "pooled"
    assert relay.network.allocation_count() == 5
    again = _open(relay, now=61 * SEC)
    assert again == ids[0] and relay.network.allocation_count() == 5


def test_single_open_in_mature_history_is_destroyed(relay):
    first = _open(relay, now=0)
    relay.proxy.close_session(first, now=0)
    relay.proxy.sweep_timeouts(200 * SEC)
    sso = _open(relay, now=200 * SEC)
    assert relay.network.allocation_count() == 1
    assert relay.proxy.close_session(sso, now=201 * SEC) == "destroyed"
    assert relay.network.allocation_count() == 0
    with pytest.raises(InvalidSession):
        relay.proxy.close_session(sso, now=202 * SEC)


def test_unpopular_pooled_instance_is_evicted_on_open(relay):
    first = _open(relay, now=0)
    assert relay.proxy.close_session(first, now=0) == "pooled"
    # 1 open over 59 s of history scales to ~1.02 per window, below 3
    second = _open(relay, now=59 * SEC)
    assert second != first
    assert [r["sso"] for r in relay.ops("pool_evict", reason="unpopular")] == [first]
    assert relay.network.allocation_count() == 1


def test_idle_timeout_threshold(relay):
    sso = _open(relay, now=0)
    assert relay.proxy.sweep_timeouts(29 * SEC) == []
    assert relay.proxy.session_count() == 1
    closed = relay.proxy.sweep_timeouts(31 * SEC)
    assert [sid for sid, _ in closed] == [sso] and relay.proxy.session_count() == 0


def test_pooled_instance_expires_after_twice_the_timeout(relay):
    sso = _open(relay, now=0)
    relay.proxy.close_session(sso, now=0)
    assert relay.proxy.sweep_timeouts(59 * SEC) == []
    assert relay.proxy.sweep_timeouts(61 * SEC) == [(sso, "destroyed")]
    assert relay.network.allocation_count() == 0


def test_data_refreshes_activity(relay):
    sso = _open(relay, now=0)
    relay.proxy.data(sso, {"op": "send", "payload": b"x"}, now=20 * SEC)
    assert relay.proxy.sweep_timeouts(45 * SEC) == []


def test_reactivation_keeps_identity_and_constants(stack):
    publish(stack.registry, descriptor("m", net="dtn_store", net_params={"capacity": 2}))
    stack.echo()
    sso = _open(stack, now=0)
    before = dict(stack.proxy.instance(sso).constants)
    stack.proxy.close_session(sso, now=SEC)
    assert _open(stack, now=2 * SEC) == sso
    assert dict(stack.proxy.instance(sso).constants) == before == {"capacity": 2}


# -- events --------------------------------------------------------------------
def test_only_affected_pools_run_handlers(stack):
    publish(stack.registry, descriptor("m"))
    stack.echo()
    stack.echo(ip="B", port=7)
    to_c = _open(stack)
    to_b = _open(stack, ip="B")
    assert stack.proxy.instance(to_b).pool.get("main").links == ("ab",)
    assert stack.proxy.deliver_event(stack.network.set_link_state("bc", {"latency_ms": 6})) == [to_c]
    assert {r["sso"] for r in stack.ops("handler")} == {to_c}
    assert sorted(stack.proxy.deliver_event(stack.network.set_link_state("ab", {"latency_ms": 9}))) == sorted([to_c, to_b])


def test_pooled_instance_defers_and_replays(stack):
    publish(stack.registry, descriptor("m", net="latency_guard"))
    stack.echo()
    sso = _open(stack, now=0)
    stack.proxy.close_session(sso, now=0)
    stack.network.set_link_state("ab", {"latency_ms": 30})
    assert [r["sso"] for r in stack.ops("defer")] == [sso]
    assert stack.ops("handler") == []
    assert _open(stack, now=SEC) == sso
    ops = [r["op"] for r in stack.trace if r.get("sso") == sso]
    tail = ops[ops.index("reactivate"):]
    assert tail[:4] == ["reactivate", "replay", "handler", "pool_remove"]
    assert stack.proxy.instance(sso).pool.get("main").nodes == ("A", "C")


class _Boom(bh.Relay):
    def on_path_event(self, state, event, view):
        raise RuntimeError("handler bug")


def test_handler_errors_are_contained(relay):
    sso = _open(relay)
    relay.proxy.instance(sso).behavior = _Boom()
    relay.network.set_link_state("ab", {"latency_ms": 11})
    inst = relay.proxy.instance(sso)
    assert inst.status == "active" and inst.errors == 1 and relay.proxy.handler_errors == 1
    assert relay.proxy.data(sso, {"op": "send", "payload": b"still"}) == {"delivered": True}


# -- monitoring ----------------------------------------------------------------
def test_sampling_and_ewma(relay):
    sso = _open(relay)
    relay.proxy.record_sample(sso, 10)
    report = relay.proxy.record_sample(sso, 20)
    assert report.ewma == pytest.approx(12.0) and report.attained == 2
    report = relay.proxy.record_sample(sso, 40)
    assert report.samples == 3 and report.attained == 2 and not report.violated
    assert relay.registry.stats("m").samples == 3


def test_ewma_over_bound_notifies_device(relay):
    pushed = []
    sso = _open(relay, sink=pushed.append)
    relay.proxy.record_sample(sso, 100)
    assert pushed[-1]["type"] == "ObjectiveViolation"
    with pytest.raises(InvalidSession):
        relay.proxy.record_sample("sso-404", 1)


@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=40))
@settings(max_examples=60, deadline=None)
def test_attainment_matches_independent_recount(values):
    stack = Stack()
    publish(stack.registry, descriptor("m"))
    stack.echo()
    sso = _open(stack)
    for v in values:
        report = stack.proxy.record_sample(sso, v)
    ewma = values[0]
    for v in values[1:]:
        ewma = EWMA_ALPHA * v + (1 - EWMA_ALPHA) * ewma
    assert report.attained == sum(v <= 30 for v in values)
    assert report.ewma == pytest.approx(ewma)
    assert stack.registry.stats("m").attained == report.attained


# -- composition ---------------------------------------------------------------
def _composed(stack, parts):
    for p in parts:
        publish(stack.registry, descriptor(p))
    stack.registry.compose_modules(parts, {"module_key": "c", "contributor": "ana"})
    stack.registry.review_module("c", "accept")
    stack.echo()
    return _open(stack, key="c")


def test_delegation_runs_parts_in_order(stack):
    sso = _composed(stack, ["m1", "m2"])
    stack.proxy.data(sso, {"op": "send", "payload": b"hi"})
    sends = [r["part"] for r in stack.ops("delegate", request="send")]
    assert sends == ["m1", "m2"]
    assert [r["part"] for r in stack.ops("delegate", request="open")] == ["m1", "m2"]


def test_delegation_outside_parts_is_refused(stack):
    sso = _composed(stack, ["m1"])
    publish(stack.registry, descriptor("m9"))
    with pytest.raises(DelegationRefused):
        stack.proxy.delegate(sso, "m9", {"op": "send", "payload": b""})


def test_closing_a_composite_frees_every_part(stack):
    _composed(stack, ["m1", "m2"])
    assert stack.network.allocation_count() == 2  # one path per part
    stack.proxy.sweep_timeouts(10**9)
    stack.proxy.sweep_timeouts(2 * 10**9)
    assert stack.network.allocation_count() == 0 and stack.proxy.instances() == []


# -- conservation --------------------------------------------------------------
@given(st.lists(st.tuples(st.sampled_from(["open", "close", "wait"]), st.integers(0, 40)), max_size=40))
@settings(max_examples=60, deadline=None)
def test_quiescence_frees_every_allocation(ops):
    stack = Stack(policy=PoolPolicy(window_ms=60 * SEC, reuse_threshold=3, inactivity_timeout_ms=30 * SEC))
    publish(stack.registry, descriptor("m"))
    stack.echo()
    ent = stack.registry.purchase("app", "m")
    now, live = 0, []
    for op, arg in ops:
        if op == "open":
            live.append(_open(stack, now=now, ent=ent))
        elif op == "close" and live:
            sso = live.pop(arg % len(live))
            try:
                stack.proxy.close_session(sso, now=now)
            except InvalidSession:
                pass  # already timed out
        else:
            now += arg * SEC
            stack.proxy.sweep_timeouts(now)
        assert stack.proxy.total_constructions() <= sum(stack.proxy.open_count.values())
    stack.proxy.sweep_timeouts(now + 31 * SEC)
    stack.proxy.sweep_timeouts(now + 200 * SEC)
    assert stack.network.allocation_count() == 0
