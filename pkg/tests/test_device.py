import dataclasses
import json

import pytest
from hypothesis import given, settings, strategies as st

from socketstore import device
from socketstore.device import DeviceConfig, ToCache
from socketstore.errors import (
    BindFailed,
    ConnectFailed,
    ConnectionClosed,
    FrameTooLarge,
    InvalidArgument,
    RecvTimeout,
    Unsupported,
)
from socketstore.wire import MAX_FRAME

from conftest import Stack, descriptor, publish


def _runtime(stack, keys=("m",), cache=None, ents=None, endpoints=("store",), **cfg):
    ents = ents if ents is not None else [stack.registry.purchase("app", k) for k in keys]
    config = DeviceConfig(list(endpoints), "app", ents, attach_node="A", ip="10.0.0.1", recv_timeout_ms=0, **cfg)
    return device.init_runtime(config, stack.connector, stack.peers, cache or ToCache())


@pytest.fixture
def dtn_stack(stack):
    publish(stack.registry, descriptor("m", net="relay", dev="dtn_client", params={"gold": {}}))
    stack.echo()
    return stack


def _round_trip(conn, payload=b"abc"):
    conn.send(payload)
    return conn.recv()


# -- initialization ------------------------------------------------------------
def test_cold_then_warm_cache(dtn_stack, tmp_path):
    ent = dtn_stack.registry.purchase("app", "m")
    cold = _runtime(dtn_stack, ents=[ent], cache=ToCache(tmp_path))
    assert cold.transfers == 1 and cold.to_bytes > 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["m.to.json", "m.ver"]
    assert (tmp_path / "m.ver").read_text() == "1"
    warm = _runtime(dtn_stack, ents=[ent], cache=ToCache(tmp_path))
    assert warm.transfers == 0 and warm.to_bytes == 0


def test_stale_cache_downloads_once(dtn_stack, tmp_path):
    ent = dtn_stack.registry.purchase("app", "m")
    _runtime(dtn_stack, ents=[ent], cache=ToCache(tmp_path))
    dtn_stack.registry.publish_module(descriptor("m", dev="dtn_client", params={"gold": {}}), "ana")
    dtn_stack.registry.review_module("m", "accept")
    rt = _runtime(dtn_stack, ents=[ent], cache=ToCache(tmp_path))
    assert rt.transfers == 1 and (tmp_path / "m.ver").read_text() == "2"


def test_corrupt_entry_is_refetched(dtn_stack, tmp_path):
    ent = dtn_stack.registry.purchase("app", "m")
    _runtime(dtn_stack, ents=[ent], cache=ToCache(tmp_path))
    doc = json.loads((tmp_path / "m.to.json").read_text())
    doc["params"] = {"evil": True}
    (tmp_path / "m.to.json").write_text(json.dumps(doc))
    cache = ToCache(tmp_path)
    rt = _runtime(dtn_stack, ents=[ent], cache=cache)
    assert cache.discarded == 1 and rt.transfers == 1
    assert cache.load("m").verify()


def test_unreachable_store_degrades(dtn_stack):
    dtn_stack.directory.set_up("store", False)
    rt = _runtime(dtn_stack)
    assert rt.degraded and rt.transfers == 0
    conn = rt.connect("tcp", "10.0.0.3", 7, "gold")
    assert conn.kind == "LegacySocket" and rt.fallbacks == ["StoreUnreachable"]
    assert _round_trip(conn) == b"abc"


def test_second_endpoint_is_tried(dtn_stack):
    rt = _runtime(dtn_stack, endpoints=("nowhere", "store"))
    assert rt.endpoint == "store" and not rt.degraded


def test_config_requires_an_endpoint(dtn_stack):
    with pytest.raises(InvalidArgument):
        _runtime(dtn_stack, endpoints=())


# -- connect and fallback --------------------------------------------------------
def test_module_socket_round_trip(dtn_stack):
    rt = _runtime(dtn_stack)
    conn = device.connect(rt, "tcp", "10.0.0.3", 7, "gold")
    assert conn.kind == "ModuleSocket" and dtn_stack.proxy.session_count() == 1
    assert _round_trip(conn) == b"abc"
    device.close(conn)
    assert dtn_stack.proxy.session_count() == 0
    with pytest.raises(ConnectionClosed):
        conn.send(b"x")
    with pytest.raises(ConnectionClosed):
        conn.close()


def test_without_module_id_is_legacy(dtn_stack):
    rt = _runtime(dtn_stack)
    conn = rt.connect("tcp", "10.0.0.3", 7)
    assert conn.kind == "LegacySocket" and rt.fallbacks == []
    assert _round_trip(conn) == b"abc"


def _fault(stack, name):
    if name == "endpoint_down":
        rt = _runtime(stack)
        stack.directory.set_up("store", False)
        return rt, "gold"
    if name == "unauthorized":
        ent = stack.registry.purchase("app", "m")
        return _runtime(stack, ents=[dataclasses.replace(ent, token="f" * 64)]), "gold"
    if name == "unknown_parameterization":
        return _runtime(stack), "platinum"
    if name == "checksum":
        cache = ToCache()
        rt = _runtime(stack, cache=cache)
        text, ver = cache._raw("m")
        cache.write_raw("m", text.replace('"dtn_client"', '"default"'), ver)
        return rt, "gold"
    if name == "behavior_error":
        publish(stack.registry, descriptor("s", dev={"behavior_id": "streaming", "params": {"chunk_size": 0}}, params={"s.x": {}}))
        return _runtime(stack, keys=("m", "s")), "s.x"
    raise AssertionError(name)


@pytest.mark.parametrize(
    "fault,reason",
    [
        ("endpoint_down", "StoreUnreachable"),
        ("unauthorized", "UnknownParameterization"),
        ("unknown_parameterization", "UnknownParameterization"),
        ("checksum", "ValidationFailed"),
        ("behavior_error", "BehaviorError"),
    ],
)
def test_every_fault_falls_back_to_a_working_legacy_socket(dtn_stack, fault, reason):
    rt, module_id = _fault(dtn_stack, fault)
    conn = rt.connect("tcp", "10.0.0.3", 7, module_id)
    assert conn.kind == "LegacySocket"
    assert rt.fallbacks == [reason]
    assert _round_trip(conn, b"x" * 1024) == b"x" * 1024


def test_open_refused_by_store_falls_back(dtn_stack):
    rt = _runtime(dtn_stack)
    dtn_stack.network.set_link_state("ac", {"up": False})
    dtn_stack.network.set_link_state("bc", {"up": False})
    conn = rt.connect("tcp", "10.0.0.3", 7, "gold")
    assert conn.kind == "LegacySocket" and rt.fallbacks == ["AllocationFailed"]


def test_unreachable_legacy_destination(dtn_stack):
    rt = _runtime(dtn_stack)
    with pytest.raises(ConnectFailed):
        rt.connect("tcp", "10.0.0.99", 7)


# -- socket surface --------------------------------------------------------------
def test_oversize_payload(dtn_stack):
    rt = _runtime(dtn_stack)
    for conn in (rt.connect("tcp", "10.0.0.3", 7), rt.connect("tcp", "10.0.0.3", 7, "gold")):
        with pytest.raises(FrameTooLarge):
            conn.send(b"\0" * (MAX_FRAME + 1))


def test_recv_timeout_and_closed(dtn_stack):
    rt = _runtime(dtn_stack)
    conn = rt.connect("tcp", "10.0.0.3", 7)
    with pytest.raises(RecvTimeout):
        conn.recv(0)
    conn.close()
    with pytest.raises(ConnectionClosed):
        conn.recv(0)


def test_events_and_kind_rules(dtn_stack):
    rt = _runtime(dtn_stack)
    legacy = rt.connect("tcp", "10.0.0.3", 7)
    with pytest.raises(Unsupported):
        legacy.on_event("ObjectiveViolation", print)
    with pytest.raises(InvalidArgument):
        legacy.on_event("Nope", print)
    conn = rt.connect("tcp", "10.0.0.3", 7, "gold")
    got, violations = [], []
    device.on_event(conn, "IncomingData", got.append)
    device.on_event(conn, "ObjectiveViolation", violations.append)
    conn.send(b"hi")
    assert got == [b"hi"]
    for value in (10, 80, 5, 90):
        conn.report_sample(value)
    # EWMA 10, 24, 20.2, 34.16: only the last report exceeds 30
    assert len(violations) == 1 and violations[0]["ewma"] == pytest.approx(34.16)


def test_utilities_follow_the_device_behavior(dtn_stack):
    rt = _runtime(dtn_stack)
    conn = rt.connect("tcp", "10.0.0.3", 7, "gold")
    with pytest.raises(Unsupported):
        conn.send_stream(b"abc")
    publish(dtn_stack.registry, descriptor("s", dev={"behavior_id": "streaming", "params": {"chunk_size": 2}}, params={"s.x": {}}))
    rt2 = _runtime(dtn_stack, keys=("s",))
    stream = rt2.connect("tcp", "10.0.0.3", 7, "s.x")
    assert stream.send_stream(b"abcde") == 3
    assert [stream.recv() for _ in range(3)] == [b"ab", b"cd", b"e"]
    with pytest.raises(Unsupported):
        stream.undo_send()


def test_listener_kinds_and_bind_conflict(dtn_stack):
    rt = _runtime(dtn_stack)
    listener = device.bind_listen(rt, 7000, "gold")
    assert listener.kind == "ModuleSocket"
    with pytest.raises(BindFailed):
        rt.bind_listen(7000)
    other = _runtime(dtn_stack)
    other.config.ip = "10.0.0.2"
    client = other.connect("tcp", "10.0.0.1", 7000)
    client.send(b"ping")
    served = listener.accept()
    assert served.kind == "ModuleSocket" and served.recv() == b"ping"
    served.send(b"pong")
    assert client.recv() == b"pong"
    assert rt.bind_listen(7001, "platinum").kind == "LegacySocket"
    assert rt.fallbacks == ["UnknownParameterization"]
    listener.close()
    rt.bind_listen(7000)


def test_shutdown_closes_module_sessions(dtn_stack, tmp_path):
    ent = dtn_stack.registry.purchase("app", "m")
    rt = _runtime(dtn_stack, ents=[ent], cache=ToCache(tmp_path))
    conns = [rt.connect("tcp", "10.0.0.3", 7, "gold") for _ in range(2)] + [rt.connect("tcp", "10.0.0.3", 7)]
    link = dtn_stack.links[-1]
    assert device.shutdown(rt) == 2
    assert link.sent_kinds["CloseSession"] == 2
    assert all(c.state == "closed" for c in conns) and dtn_stack.proxy.session_count() == 0
    assert _runtime(dtn_stack, ents=[ent], cache=ToCache(tmp_path)).transfers == 0


def test_shutdown_with_store_gone_is_best_effort(dtn_stack):
    rt = _runtime(dtn_stack)
    rt.connect("tcp", "10.0.0.3", 7, "gold")
    dtn_stack.directory.set_up("store", False)
    assert rt.shutdown() == 0
    dtn_stack.proxy.sweep_timeouts(31_000)
    assert dtn_stack.proxy.session_count() == 0


@given(st.lists(st.binary(max_size=64), max_size=12), st.booleans())
@settings(max_examples=60, deadline=None)
def test_bytes_arrive_in_order_on_both_kinds(payloads, module):
    stack = Stack()
    publish(stack.registry, descriptor("m", dev="dtn_client", params={"gold": {}}))
    stack.echo()
    rt = _runtime(stack)
    conn = rt.connect("tcp", "10.0.0.3", 7, "gold" if module else None)
    assert conn.kind == ("ModuleSocket" if module else "LegacySocket")
    for p in payloads:
        conn.send(p)
    assert [conn.recv() for _ in payloads] == payloads
