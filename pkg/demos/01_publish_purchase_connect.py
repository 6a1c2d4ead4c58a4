"""Publish a latency-guard module, buy it, and talk through it while a link degrades."""

from socketstore import ModuleDescriptor, NetworkControl, PoolPolicy, Registry, StoreProxy, load_topology
from socketstore.behaviors import load_manifest
from socketstore.device import DeviceConfig, ToCache, init_runtime
from socketstore.fabric import EchoPeer, PeerTable, StoreDirectory
from socketstore.service import LoopbackLink, StoreService

topology = load_topology({
    "nodes": ["A", "B", "C"],
    "links": [
        {"id": "ab", "a": "A", "b": "B", "latency_ms": 10, "bandwidth_mbps": 100},
        {"id": "bc", "a": "B", "b": "C", "latency_ms": 5, "bandwidth_mbps": 50},
        {"id": "ac", "a": "A", "b": "C", "latency_ms": 20, "bandwidth_mbps": 100},
    ],
    "hosts": {"10.0.0.3": "C"},
})
network = NetworkControl(topology)
registry = Registry(manifest=load_manifest())
peers = PeerTable()
peers.bind("10.0.0.3", 7, EchoPeer())
proxy = StoreProxy(registry, network, peers, PoolPolicy())

directory = StoreDirectory()
directory.register("store", StoreService(registry, proxy))

# a contributor publishes; review accepts it
guard = ModuleDescriptor.from_dict({
    "module_key": "guard",
    "contributor": "ana",
    "objective": {"metric": "end_to_end_latency_ms", "bound": 30, "direction": "at_most"},
    "network_behavior": {"behavior_id": "latency_guard", "params": {}},
    "parameterizations": {"guard.default": {}},
})
registry.publish_module(guard, "ana")
registry.review_module("guard", "accept")
print("lifecycle:", registry.lifecycle("guard"))

ent = registry.purchase("chat-app", "guard")
config = DeviceConfig(["store"], "chat-app", [ent], attach_node="A", ip="10.0.0.1")
rt = init_runtime(config, lambda name: LoopbackLink(directory.lookup(name), directory, name), peers, ToCache())

conn = rt.connect("tcp", "10.0.0.3", 7, "guard.default")
print("connection:", conn.kind)
conn.send(b"hello")
print("echo:", conn.recv())

# A-B gets slow; the guard moves the session to the direct link
network.set_link_state("ab", {"latency_ms": 40})
conn.send(b"again")
print("echo:", conn.recv())
print("samples:", registry.stats("guard"))

conn.close()
rt.shutdown()
