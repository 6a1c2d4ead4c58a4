import itertools
import random

import pytest

from socketstore.behaviors import load_manifest
from socketstore.core import ModuleDescriptor
from socketstore.fabric import EchoPeer, PeerTable, SinkPeer, StoreDirectory
from socketstore.netsim import NetworkControl, load_topology
from socketstore.proxy import PoolPolicy, StoreProxy
from socketstore.registry import Registry
from socketstore.service import LoopbackLink, StoreService

TRIANGLE = {
    "nodes": ["A", "B", "C"],
    "links": [
        {"id": "ab", "a": "A", "b": "B", "latency_ms": 10, "bandwidth_mbps": 100},
        {"id": "bc", "a": "B", "b": "C", "latency_ms": 5, "bandwidth_mbps": 50},
        {"id": "ac", "a": "A", "b": "C", "latency_ms": 20, "bandwidth_mbps": 100},
    ],
    "hosts": {"10.0.0.3": "C"},
}

OBJECTIVE = {"metric": "end_to_end_latency_ms", "bound": 30, "direction": "at_most"}


def descriptor(key, net="relay", net_params=None, dev=None, params=None, contributor="ana", **extra):
    d = {
        "module_key": key,
        "contributor": contributor,
        "objective": extra.pop("objective", OBJECTIVE),
        "parameterizations": params if params is not None else {f"{key}.default": {}},
        **extra,
    }
    if net:
        d["network_behavior"] = {"behavior_id": net, "params": net_params or {}}
    if dev:
        d["device_behavior"] = dev if isinstance(dev, dict) else {"behavior_id": dev}
    return ModuleDescriptor.from_dict(d)


def publish(registry, desc):
    registry.publish_module(desc, desc.contributor)
    registry.review_module(desc.module_key, "accept")
    return registry.descriptor(desc.module_key)


def random_connected_graph(rng: random.Random, n_max=10, integer=True):
    """Spanning tree plus random extra edges; integer latencies keep sums exact."""
    n = rng.randint(2, n_max)
    nodes = [f"n{i}" for i in range(n)]
    links = []
    order = nodes[:]
    rng.shuffle(order)
    ids = itertools.count()
    for i in range(1, n):
        a, b = order[i], order[rng.randrange(i)]
        links.append((a, b))
    for _ in range(rng.randint(0, n * 2)):
        a, b = rng.sample(nodes, 2)
        links.append((a, b))
    return {
        "nodes": nodes,
        "links": [
            {"id": f"l{next(ids)}", "a": a, "b": b, "latency_ms": rng.randint(1, 20), "bandwidth_mbps": rng.choice([10, 50, 100])}
            for a, b in links
        ],
    }


class Clock:
    def __init__(self, t=0):
        self.t = t

    def __call__(self):
        return self.t


class Stack:
    """Registry, network control, proxy and a store endpoint wired in-process."""

    def __init__(self, topology=TRIANGLE, policy=None):
        self.clock = Clock()
        self.trace = []
        self.network = NetworkControl(load_topology(topology), trace=self.trace.append)
        self.registry = Registry(clock=self.clock, manifest=load_manifest())
        self.peers = PeerTable()
        self.proxy = StoreProxy(
            self.registry, self.network, self.peers, policy or PoolPolicy(), clock=self.clock, trace=self.trace.append
        )
        self.directory = StoreDirectory()
        self.directory.register("store", StoreService(self.registry, self.proxy))
        self.links = []

    def connector(self, name):
        link = LoopbackLink(self.directory.lookup(name), self.directory, name)
        self.links.append(link)
        return link

    def echo(self, ip="10.0.0.3", port=7):
        peer = EchoPeer()
        self.peers.bind(ip, port, peer)
        return peer

    def sink(self, ip="10.0.0.3", port=9):
        peer = SinkPeer()
        self.peers.bind(ip, port, peer)
        return peer

    def dst(self, ip="10.0.0.3", port=7):
        return {"ip": ip, "port": port, "protocol": "tcp"}

    def ops(self, where=None, **match):
        return [
            r for r in self.trace
            if r.get("svc") == "proxy" and (where is None or r.get("op") == where) and all(r.get(k) == v for k, v in match.items())
        ]


@pytest.fixture
def stack():
    return Stack()


# -- acceptance summary -----------------------------------------------------------
_CRITERIA: dict[int, tuple[str, bool, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    number, title = marker.args
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    _, ok_so_far, _ = _CRITERIA.get(number, (title, True, ""))
    _CRITERIA[number] = (title, ok_so_far and rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[number]
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
