import copy
import random

import pytest
from hypothesis import given, settings, strategies as st

from socketstore import behaviors as bh
from socketstore.errors import AllocationFailed, BehaviorError, NothingToRedo, NothingToUndo
from socketstore.netsim import NetworkEvent

from conftest import Stack, descriptor, publish, random_connected_graph
from oracles import simple_paths

DIAMOND = {
    "nodes": ["S", "X", "Y", "D", "Z"],
    "links": [
        {"id": "sx", "a": "S", "b": "X", "latency_ms": 5, "bandwidth_mbps": 100},
        {"id": "xd", "a": "X", "b": "D", "latency_ms": 5, "bandwidth_mbps": 100},
        {"id": "sy", "a": "S", "b": "Y", "latency_ms": 10, "bandwidth_mbps": 100},
        {"id": "yd", "a": "Y", "b": "D", "latency_ms": 10, "bandwidth_mbps": 100},
        {"id": "dz", "a": "D", "b": "Z", "latency_ms": 1, "bandwidth_mbps": 100},
    ],
}


def _session(stack, net, net_params=None, ip="10.0.0.3", src="A", peer="echo", pushed=None):
    publish(stack.registry, descriptor("m", net=net, net_params=net_params))
    target = (stack.echo if peer == "echo" else stack.sink)(ip=ip, port=7)
    ent = stack.registry.purchase("app", "m")
    sink = pushed.append if pushed is not None else None
    opened = stack.proxy.open_session(ent, "m", "m.default", {"ip": ip, "port": 7}, src=src, sink=sink)
    return opened.sso_id, target


def _send(stack, sso, payload, op="send"):
    return stack.proxy.data(sso, {"op": op, "payload": payload} if payload is not None else {"op": op})


# -- latency_guard -------------------------------------------------------------
def test_guard_moves_off_a_degraded_link(stack):
    sso, _ = _session(stack, "latency_guard")
    assert stack.proxy.instance(sso).pool.get("main").nodes == ("A", "B", "C")
    stack.network.set_link_state("bc", {"latency_ms": 50})
    assert stack.proxy.instance(sso).pool.get("main").nodes == ("A", "C")
    assert [r["reroute"] for r in stack.ops("note")] == [["A", "C"]]


def test_guard_keeps_an_optimal_path(stack):
    sso, _ = _session(stack, "latency_guard")
    stack.network.set_link_state("ab", {"latency_ms": 12})
    assert stack.ops("pool_remove") == [] and stack.ops("note") == []
    assert stack.ops("handler", sso=sso)


def test_guard_reports_total_outage(stack):
    pushed = []
    sso, _ = _session(stack, "latency_guard", pushed=pushed)
    stack.network.set_link_state("bc", {"up": False})
    stack.network.set_link_state("ac", {"up": False})
    assert pushed[-1] == {"type": "ObjectiveViolation", "reason": "NoRoute", "bound": 30}
    assert _send(stack, sso, b"x") == {"delivered": False}


@given(st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_guard_path_is_optimal_after_every_mutation(seed):
    rng = random.Random(seed)
    doc = random_connected_graph(rng, 8)
    src, dst = rng.sample(doc["nodes"], 2)
    stack = Stack(topology=doc)
    sso, _ = _session(stack, "latency_guard", net_params={"bound_ms": 10**6}, ip=dst, src=src)
    for _ in range(8):
        link = rng.choice(doc["links"])
        change = {"latency_ms": rng.randint(1, 30)} if rng.random() < 0.7 else {"up": rng.random() < 0.5}
        ran_before = len(stack.ops("handler", sso=sso))
        stack.network.set_link_state(link["id"], change)
        if "latency_ms" in change:
            link["latency_ms"] = change["latency_ms"]
        else:
            link["up"] = change["up"]
        if len(stack.ops("handler", sso=sso)) == ran_before:
            continue  # the change missed the held path; no handler ran
        held = stack.proxy.instance(sso).pool.get("main")
        candidates = simple_paths(doc, src, dst)
        if candidates:
            assert stack.network.path_is_up(held)
            assert stack.network.path_metrics(held)[0] == min(candidates)[0]


# -- multipath_failover ----------------------------------------------------------
def test_failover_switches_without_loss():
    stack = Stack(topology=DIAMOND)
    sso, peer = _session(stack, "multipath_failover", ip="D", src="S", peer="sink")
    inst = stack.proxy.instance(sso)
    assert inst.pool.get("primary").nodes == ("S", "X", "D")
    assert inst.pool.get("backup").nodes == ("S", "Y", "D")
    sent = [f"p{i}".encode() for i in range(6)]
    for i, p in enumerate(sent):
        if i == 3:
            stack.network.set_link_state("xd", {"up": False})
        assert _send(stack, sso, p)["delivered"] is True
    assert peer.received == sent
    assert [r["switch"] for r in stack.ops("note")] == ["backup"]


def test_backup_failure_does_not_switch():
    stack = Stack(topology=DIAMOND)
    sso, _ = _session(stack, "multipath_failover", ip="D", src="S")
    stack.network.set_link_state("yd", {"up": False})
    assert stack.ops("note") == []
    assert stack.proxy.instance(sso).variables["active"] == "primary"


def test_cut_vertex_refuses_construction():
    stack = Stack(topology=DIAMOND)
    with pytest.raises(AllocationFailed):
        _session(stack, "multipath_failover", ip="Z", src="S")
    assert stack.network.allocation_count() == 0


# -- dtn_store -------------------------------------------------------------------
def _dtn(stack, capacity=4):
    sso, peer = _session(stack, "dtn_store", net_params={"capacity": capacity}, peer="sink")
    stack.network.set_link_state("bc", {"up": False})
    stack.network.set_link_state("ac", {"up": False})
    return sso, peer


def _reconnect(stack):
    # the session last held A-C, so only that link wakes its handler
    stack.network.set_link_state("ac", {"up": True})


def test_undo_drops_the_newest(stack):
    sso, peer = _dtn(stack)
    _send(stack, sso, b"a")
    _send(stack, sso, b"b")
    assert _send(stack, sso, None, "undo") == {"undone": True}
    _reconnect(stack)
    assert peer.received == [b"a"]


def test_redo_reinstates(stack):
    sso, peer = _dtn(stack)
    _send(stack, sso, b"a")
    _send(stack, sso, None, "undo")
    _send(stack, sso, None, "redo")
    with pytest.raises(NothingToRedo):
        _send(stack, sso, None, "redo")
    _reconnect(stack)
    assert peer.received == [b"a"]


def test_overflow_drops_oldest(stack):
    sso, peer = _dtn(stack, capacity=2)
    replies = [_send(stack, sso, p) for p in (b"a", b"b", b"c")]
    assert replies[-1] == {"buffered": True, "losses": 1}
    _reconnect(stack)
    assert peer.received == [b"b", b"c"]
    assert stack.proxy.blobs.list(sso) == []


def test_undo_on_empty_buffer(stack):
    sso, _ = _dtn(stack)
    with pytest.raises(NothingToUndo):
        _send(stack, sso, None, "undo")


def _dtn_model(ops, capacity):
    buffer, redo, delivered = [], None, []
    for op, payload in ops:
        if op == "send":
            redo = None
            if len(buffer) >= capacity:
                buffer.pop(0)
            buffer.append(payload)
        elif op == "undo" and buffer:
            redo = buffer.pop()
        elif op == "redo" and redo is not None:
            if len(buffer) >= capacity:
                buffer.pop(0)
            buffer.append(redo)
            redo = None
    return delivered + buffer


@given(
    st.lists(st.tuples(st.sampled_from(["send", "send", "undo", "redo"]), st.binary(min_size=1, max_size=8)), max_size=25),
    st.integers(1, 5),
)
@settings(max_examples=80, deadline=None)
def test_dtn_delivery_matches_model(ops, capacity):
    stack = Stack()
    sso, peer = _dtn(stack, capacity)
    for op, payload in ops:
        try:
            _send(stack, sso, payload if op == "send" else None, op)
        except (NothingToUndo, NothingToRedo):
            pass
    _reconnect(stack)
    assert peer.received == _dtn_model(ops, capacity)


# -- purity ----------------------------------------------------------------------
class _FrozenView:
    constants = {"capacity": 2, "bound_ms": 30}
    objective = type("O", (), {"bound": 30})()
    src, dst = "A", "C"

    def __init__(self, up=True):
        self.up = up

    def roles(self):
        return ["main", "primary", "backup"]

    def path(self, role):
        return type("P", (), {"links": ("ab",), "nodes": ("A", "B", "C")})()

    def path_up(self, role):
        return self.up

    def latency(self, role):
        return 15

    def best_path(self, constraints=None):
        return (("A", "C"), 12) if self.up else None

    def disjoint_pair(self):
        return ("A", "B", "C"), ("A", "C")


@pytest.mark.parametrize("bid", sorted(set(bh.NETWORK_BEHAVIORS) - {"composition"}))
@pytest.mark.parametrize("up", [True, False])
def test_hooks_are_deterministic_and_do_not_mutate_input(bid, up):
    behavior = bh.network_behavior(bid)
    view = _FrozenView(up)
    state, _ = behavior.on_construct({}, view)
    event = NetworkEvent("LinkDown", "ab", True, False, 1)
    for hook, arg in (("on_path_event", event), ("on_data", {"op": "send", "payload": b"z"})):
        snapshot = copy.deepcopy(state)
        first = getattr(behavior, hook)(state, arg, view)
        assert state == snapshot
        assert getattr(bh.network_behavior(bid), hook)(copy.deepcopy(state), arg, view) == first


def test_streaming_chunks_and_validates():
    s = bh.device_behavior("streaming", {"chunk_size": 3})
    assert s.chunks(b"abcdefg") == [b"abc", b"def", b"g"]
    assert s.chunks([b"ab", b"cd"]) == [b"abc", b"d"]
    with pytest.raises(BehaviorError):
        bh.device_behavior("streaming", {"chunk_size": 0}).on_connect("tcp", "x", 1)
    with pytest.raises(BehaviorError):
        bh.device_behavior("nope", {})
