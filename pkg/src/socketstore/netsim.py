"""Simulated Network Control: topology, path allocation, link-state events, monitoring."""

from __future__ import annotations

import heapq
import itertools
import logging
import math
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

import networkx as nx

from .errors import AlreadyReleased, InvalidArgument, NoRoute, NotFound, StalePath, TopologyError

log = logging.getLogger(__name__)

EVENT_TYPES = ("LinkLatencyChanged", "LinkBandwidthChanged", "LinkDown", "LinkUp")
UNBOUNDED = math.inf


@dataclass
class Link:
    id: str
    a: str
    b: str
    latency_ms: float
    bandwidth_mbps: float
    up: bool = True

    def other(self, node: str) -> str:
        return self.b if node == self.a else self.a

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "a": self.a,
            "b": self.b,
            "latency_ms": self.latency_ms,
            "bandwidth_mbps": self.bandwidth_mbps,
            "up": self.up,
        }


@dataclass
class Topology:
    nodes: set[str] = field(default_factory=set)
    links: dict[str, Link] = field(default_factory=dict)
    # ip -> attachment node; unknown ips resolve to a node of the same name
    hosts: dict[str, str] = field(default_factory=dict)

    def resolve(self, address: str) -> str:
        node = self.hosts.get(address, address)
        if node not in self.nodes:
            raise NotFound(f"address {address!r} is not attached to the topology")
        return node

    def adjacency(self) -> dict[str, list[Link]]:
        adj: dict[str, list[Link]] = {n: [] for n in self.nodes}
        for link in self.links.values():
            adj[link.a].append(link)
            adj[link.b].append(link)
        return adj

    def to_dict(self) -> dict:
        doc: dict[str, Any] = {
            "nodes": sorted(self.nodes),
            "links": [self.links[k].to_dict() for k in sorted(self.links)],
        }
        if self.hosts:
            doc["hosts"] = dict(sorted(self.hosts.items()))
        return doc


def _positive(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value) and value > 0


def load_topology(document: dict) -> Topology:
    """Build a Topology from ``{"nodes": [...], "links": [...], "hosts"?: {...}}``."""
    if not isinstance(document, dict) or "nodes" not in document or "links" not in document:
        raise TopologyError("document needs 'nodes' and 'links'")
    topo = Topology()
    for n in document["nodes"]:
        if not isinstance(n, str) or not n:
            raise TopologyError(f"bad node id {n!r}", offender=n)
        if n in topo.nodes:
            raise TopologyError(f"duplicate node {n}", offender=n)
        topo.nodes.add(n)
    for raw in document["links"]:
        try:
            lid, a, b = raw["id"], raw["a"], raw["b"]
            lat, bw = raw["latency_ms"], raw["bandwidth_mbps"]
        except (KeyError, TypeError):
            raise TopologyError(f"link record incomplete: {raw!r}") from None
        if lid in topo.links:
            raise TopologyError(f"duplicate link id {lid}", offender=lid)
        for end in (a, b):
            if end not in topo.nodes:
                raise TopologyError(f"link {lid} references unknown node {end}", offender=end)
        if a == b:
            raise TopologyError(f"link {lid} is a self-loop on {a}", offender=lid)
        if not _positive(lat):
            raise TopologyError(f"link {lid} latency_ms must be positive", offender=lid)
        if not _positive(bw):
            raise TopologyError(f"link {lid} bandwidth_mbps must be positive", offender=lid)
        topo.links[lid] = Link(lid, a, b, lat, bw, bool(raw.get("up", True)))
    for ip, node in (document.get("hosts") or {}).items():
        if node not in topo.nodes:
            raise TopologyError(f"host {ip} attached to unknown node {node}", offender=node)
        topo.hosts[ip] = node
    return topo


@dataclass(frozen=True)
class Path:
    path_id: str
    nodes: tuple[str, ...]
    links: tuple[str, ...]
    owner: str = ""

    def to_dict(self) -> dict:
        return {"path_id": self.path_id, "nodes": list(self.nodes), "links": list(self.links), "owner": self.owner}

    @classmethod
    def from_dict(cls, d: dict) -> "Path":
        return cls(d["path_id"], tuple(d["nodes"]), tuple(d["links"]), d.get("owner", ""))


@dataclass(frozen=True)
class NetworkEvent:
    event_type: str
    link_id: str
    old: Any
    new: Any
    seq: int

    def to_dict(self) -> dict:
        return {"event_type": self.event_type, "link_id": self.link_id, "old": self.old, "new": self.new, "seq": self.seq}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkEvent":
        return cls(d["event_type"], d["link_id"], d["old"], d["new"], d["seq"])


def shortest_path(
    topo: Topology,
    src: str,
    dst: str,
    min_bandwidth: float | None = None,
    exclude_links: Iterable[str] = (),
    exclude_nodes: Iterable[str] = (),
) -> tuple[tuple[str, ...], tuple[str, ...], float]:
    """Minimum-latency simple path over up links.

    Ties go to the lexicographically smallest node sequence; between parallel
    links the lower (latency, id) wins. Returns ``(nodes, links, latency)``.
    """
    for n in (src, dst):
        if n not in topo.nodes:
            raise NotFound(f"unknown node {n!r}")
    if src == dst:
        return (), (), 0
    banned_links = set(exclude_links)
    banned_nodes = set(exclude_nodes) - {src, dst}
    best_link: dict[tuple[str, str], Link] = {}
    for link in topo.links.values():
        if not link.up or link.id in banned_links:
            continue
        if min_bandwidth is not None and link.bandwidth_mbps < min_bandwidth:
            continue
        if link.a in banned_nodes or link.b in banned_nodes:
            continue
        for u, v in ((link.a, link.b), (link.b, link.a)):
            cur = best_link.get((u, v))
            if cur is None or (link.latency_ms, link.id) < (cur.latency_ms, cur.id):
                best_link[(u, v)] = link
    nbrs: dict[str, list[tuple[str, Link]]] = {}
    for (u, v), link in best_link.items():
        nbrs.setdefault(u, []).append((v, link))

    best: dict[str, tuple[float, tuple[str, ...]]] = {src: (0, (src,))}
    heap: list[tuple[float, tuple[str, ...]]] = [(0, (src,))]
    settled: set[str] = set()
    while heap:
        d, p = heapq.heappop(heap)
        u = p[-1]
        if u in settled:
            continue
        settled.add(u)
        if u == dst:
            links = tuple(best_link[(p[i], p[i + 1])].id for i in range(len(p) - 1))
            return p, links, d
        for v, link in nbrs.get(u, ()):
            if v in settled:
                continue
            cand = (d + link.latency_ms, p + (v,))
            if v not in best or cand < best[v]:
                best[v] = cand
                heapq.heappush(heap, cand)
    raise NoRoute(f"no route {src} -> {dst}")


@dataclass
class _Subscription:
    sub_id: int
    callback: Callable[[NetworkEvent], None]
    event_types: frozenset[str]
    links: frozenset[str] | None

    def matches(self, ev: NetworkEvent) -> bool:
        return ev.event_type in self.event_types and (self.links is None or ev.link_id in self.links)


class NetworkControl:
    """In-process Network Control.

    Every command takes the same re-entrant lock, which gives all mutations a
    total order; event ``seq`` follows that order. Subscriber callbacks run
    after the state lock is released, drained FIFO under a separate dispatch
    lock, so a handler may call back into allocation without deadlocking.
    """

    def __init__(self, topology: Topology, trace: Callable[[dict], None] | None = None):
        self.topology = topology
        self._trace = trace
        self._lock = threading.RLock()
        self._dispatch_lock = threading.RLock()
        self._outbox: deque[tuple[NetworkEvent, list[_Subscription]]] = deque()
        self._paths: dict[str, Path] = {}
        self._released: set[str] = set()
        self._resources: dict[str, dict] = {}
        self._subs: dict[int, _Subscription] = {}
        self._path_ids = itertools.count(1)
        self._res_ids = itertools.count(1)
        self._sub_ids = itertools.count(1)
        self._seq = 0
        self.event_log: list[NetworkEvent] = []

    def _record(self, **rec) -> None:
        if self._trace is not None:
            self._trace({"svc": "netsim", **rec})

    # -- queries --------------------------------------------------------
    def best_path(self, src: str, dst: str, constraints: dict | None = None) -> tuple[tuple[str, ...], tuple[str, ...], float]:
        c = constraints or {}
        with self._lock:
            return shortest_path(
                self.topology,
                src,
                dst,
                min_bandwidth=c.get("min_bandwidth"),
                exclude_links=c.get("exclude_links", ()),
                exclude_nodes=c.get("exclude_nodes", ()),
            )

    def resolve(self, address: str) -> str:
        with self._lock:
            return self.topology.resolve(address)

    def path_metrics(self, path: Path) -> tuple[float, float]:
        """(end-to-end latency, bottleneck bandwidth) from current link values."""
        with self._lock:
            latency: float = 0
            bandwidth: float = UNBOUNDED
            for lid in path.links:
                link = self.topology.links.get(lid)
                if link is None:
                    raise StalePath(f"link {lid} of path {path.path_id} no longer exists")
                latency += link.latency_ms
                bandwidth = min(bandwidth, link.bandwidth_mbps)
            return latency, bandwidth

    def disjoint_pair(self, src: str, dst: str) -> tuple[tuple[str, ...], tuple[str, ...]]:
        """Two internally node-disjoint up paths, lower-latency one first.

        Tries the best path plus the best path avoiding its interior; when that
        greedy choice blocks every alternative, falls back to max-flow.
        """
        with self._lock:
            if src == dst:
                raise NoRoute("no disjoint pair for a degenerate session")
            first, first_links, _ = self.best_path(src, dst)
            if len(first) == 2:
                # a parallel link gives the same node sequence, not a second path
                first_links = [
                    l.id for l in self.topology.links.values() if {l.a, l.b} == {src, dst}
                ]
            try:
                second, _, _ = self.best_path(
                    src, dst, {"exclude_nodes": first[1:-1], "exclude_links": first_links}
                )
                return first, second
            except NoRoute:
                pass
            g = nx.Graph()
            for l in self.topology.links.values():
                if l.up:
                    w = g.get_edge_data(l.a, l.b, {}).get("w", math.inf)
                    g.add_edge(l.a, l.b, w=min(w, l.latency_ms))
            try:
                paths = [tuple(p) for p in nx.node_disjoint_paths(g, src, dst)]
            except (nx.NetworkXNoPath, nx.NetworkXError):
                raise NoRoute(f"no disjoint pair {src} -> {dst}") from None
            if len(paths) < 2:
                raise NoRoute(f"no disjoint pair {src} -> {dst}")
            paths.sort(key=lambda p: (sum(g[u][v]["w"] for u, v in zip(p, p[1:])), p))
            return paths[0], paths[1]

    def path_is_up(self, path: Path) -> bool:
        with self._lock:
            return all(lid in self.topology.links and self.topology.links[lid].up for lid in path.links)

    def allocations(self, owner: str | None = None) -> list[Path]:
        with self._lock:
            return [p for p in self._paths.values() if owner is None or p.owner == owner]

    def allocation_count(self) -> int:
        with self._lock:
            return len(self._paths) + len(self._resources)

    # -- allocation ------------------------------------------------------
    def allocate_path(self, src: str, dst: str, constraints: dict | None = None, owner: str = "") -> Path:
        with self._lock:
            nodes, links, _ = self.best_path(src, dst, constraints)
            return self._register(nodes, links, owner)

    def reserve_path(self, nodes: Iterable[str], owner: str = "") -> Path:
        """Register an explicit node sequence (validated against the topology)."""
        nodes = tuple(nodes)
        with self._lock:
            if len(set(nodes)) != len(nodes):
                raise InvalidArgument("path repeats a node")
            links = []
            for u, v in zip(nodes, nodes[1:]):
                cands = [
                    l for l in self.topology.links.values()
                    if l.up and {l.a, l.b} == {u, v}
                ]
                if not cands:
                    raise NoRoute(f"no up link {u}-{v}")
                links.append(min(cands, key=lambda l: (l.latency_ms, l.id)).id)
            return self._register(nodes, tuple(links), owner)

    def _register(self, nodes: tuple[str, ...], links: tuple[str, ...], owner: str) -> Path:
        path = Path(f"path-{next(self._path_ids)}", nodes, links, owner)
        self._paths[path.path_id] = path
        self._record(op="allocate", path_id=path.path_id, nodes=list(nodes), owner=owner)
        return path

    def release_path(self, path_id: str) -> None:
        with self._lock:
            if path_id in self._released:
                raise AlreadyReleased(f"path {path_id} already released")
            if path_id not in self._paths:
                raise NotFound(f"unknown path {path_id}")
            path = self._paths.pop(path_id)
            self._released.add(path_id)
            self._record(op="release", path_id=path_id, owner=path.owner)

    def allocate_resource(self, kind: str, owner: str = "", spec: dict | None = None) -> str:
        """Opaque tagged allocation (VPN, firewall...) with no modeled semantics."""
        with self._lock:
            rid = f"res-{next(self._res_ids)}"
            self._resources[rid] = {"kind": kind, "owner": owner, "spec": dict(spec or {})}
            self._record(op="allocate_resource", resource_id=rid, kind=kind, owner=owner)
            return rid

    def release_resource(self, resource_id: str) -> None:
        with self._lock:
            if resource_id not in self._resources:
                raise NotFound(f"unknown resource {resource_id}")
            del self._resources[resource_id]
            self._record(op="release_resource", resource_id=resource_id)

    # -- link state & pub-sub -----------------------------------------------
    def subscribe(
        self,
        callback: Callable[[NetworkEvent], None],
        event_types: Iterable[str] = EVENT_TYPES,
        links: Iterable[str] | None = None,
    ) -> int:
        types = frozenset(event_types)
        unknown = types - set(EVENT_TYPES)
        if unknown:
            raise InvalidArgument(f"unknown event types {sorted(unknown)}")
        with self._lock:
            sid = next(self._sub_ids)
            self._subs[sid] = _Subscription(sid, callback, types, None if links is None else frozenset(links))
            return sid

    def unsubscribe(self, sub_id: int) -> None:
        with self._lock:
            self._subs.pop(sub_id, None)

    def set_link_state(self, link_id: str, change: dict) -> NetworkEvent | None:
        """Apply one change (latency_ms, bandwidth_mbps or up) and publish it.

        Returns the published event, or None when the value did not change.
        """
        if len(change) != 1:
            raise InvalidArgument("exactly one of latency_ms, bandwidth_mbps, up per change")
        (key, value), = change.items()
        with self._lock:
            link = self.topology.links.get(link_id)
            if link is None:
                raise NotFound(f"unknown link {link_id}")
            if key == "latency_ms":
                if not _positive(value):
                    raise InvalidArgument("latency_ms must be positive")
                etype, old = "LinkLatencyChanged", link.latency_ms
            elif key == "bandwidth_mbps":
                if not _positive(value):
                    raise InvalidArgument("bandwidth_mbps must be positive")
                etype, old = "LinkBandwidthChanged", link.bandwidth_mbps
            elif key == "up":
                value = bool(value)
                etype, old = ("LinkUp" if value else "LinkDown"), link.up
            else:
                raise InvalidArgument(f"unknown link attribute {key!r}")
            if old == value:
                return None
            setattr(link, key, value)
            self._seq += 1
            ev = NetworkEvent(etype, link_id, old, value, self._seq)
            self.event_log.append(ev)
            self._record(op="event", **ev.to_dict())
            self._outbox.append((ev, [sub for sub in self._subs.values() if sub.matches(ev)]))
        self._drain()
        return ev

    def _drain(self) -> None:
        with self._dispatch_lock:
            while True:
                with self._lock:
                    if not self._outbox:
                        return
                    ev, subs = self._outbox.popleft()
                for sub in subs:
                    try:
                        sub.callback(ev)
                    except Exception:
                        log.exception("subscriber %s failed on event %s", sub.sub_id, ev.seq)

    def remove_link(self, link_id: str) -> None:
        with self._lock:
            if self.topology.links.pop(link_id, None) is None:
                raise NotFound(f"unknown link {link_id}")
            self._record(op="remove_link", link_id=link_id)
