"""Deterministic end-to-end scenarios on a virtual clock.

A scenario is a JSON document::

    {"name": ..., "seed": 7, "topology": "triangle.json" | {...},
     "policy": {...}, "registry": {...}, "stores": ["store"],
     "peers": [{"ip": ..., "port": ..., "kind": "echo"}],
     "modules": {"name": descriptor, ...},
     "timeline": [{"at_ms": 0, "action": "publish", ...}, ...]}

Every service runs in-process; device traffic still goes through the frame
codec. Running the same file with the same seed yields byte-identical
report JSON.
"""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path as FsPath
from typing import Any, Callable

from .behaviors import load_manifest
from .core import ModuleDescriptor, Rating, canonical_json, sha256_hex
from .device import DeviceConfig, DsoRuntime, ModuleSocket, ToCache, init_runtime
from .errors import ScenarioError, SocketStoreError
from .fabric import EchoPeer, PeerTable, SinkPeer, StoreDirectory
from .netsim import NetworkControl, load_topology
from .proxy import PoolPolicy, StoreProxy
from .registry import Registry, RegistryConfig
from .service import LoopbackLink, StoreService

BUNDLED = ("fallback", "latency_guard", "multipath", "dtn", "composed", "pooling")

# action -> (required fields, name it defines as (kind, field), names it references as [(kind, field)])
ACTIONS: dict[str, tuple[tuple[str, ...], tuple[str, str] | None, tuple[tuple[str, str], ...]]] = {
    "publish": (("module",), None, ()),
    "review": (("module", "verdict"), None, ()),
    "purchase": (("app", "module", "as"), ("ent", "as"), ()),
    "rate": (("module", "rater", "stars"), None, ()),
    "deprecate": (("module",), None, ()),
    "dispose": (("module",), None, ()),
    "compose": (("module_key", "parts", "contributor"), None, ()),
    "init_device": (("device", "app"), ("device", "device"), ()),
    "connect": (("device", "as", "ip", "port"), ("conn", "as"), (("device", "device"),)),
    "bind": (("device", "as", "port"), ("listener", "as"), (("device", "device"),)),
    "send": (("conn", "payload"), None, (("conn", "conn"),)),
    "recv": (("conn",), None, (("conn", "conn"),)),
    "close": (("conn",), None, (("conn", "conn"),)),
    "undo_send": (("conn",), None, (("conn", "conn"),)),
    "redo_send": (("conn",), None, (("conn", "conn"),)),
    "sample": (("conn", "value"), None, (("conn", "conn"),)),
    "shutdown": (("device",), None, (("device", "device"),)),
    "set_link_state": (("link", "change"), None, ()),
    "advance_time": (("ms",), None, ()),
    "sweep": ((), None, ()),
    "store_down": (("store",), None, ()),
    "store_up": (("store",), None, ()),
    "peer": (("ip", "port"), None, ()),
    "corrupt_cache": (("cache", "module"), None, ()),
    "assert": (("check",), None, ()),
}


@dataclass
class TraceReport:
    scenario: str
    seed: int
    events: list[dict] = field(default_factory=list)
    final: dict = field(default_factory=dict)
    assertions: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(a["ok"] for a in self.assertions)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1

    def failures(self) -> list[dict]:
        return [a for a in self.assertions if not a["ok"]]

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "passed": self.passed,
            "assertions": self.assertions,
            "final": self.final,
            "events": self.events,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, ensure_ascii=False, default=_default) + "\n"


def _default(obj: Any) -> Any:
    if isinstance(obj, (bytes, bytearray)):
        return bytes(obj).decode("utf-8", "backslashreplace")
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if isinstance(obj, (set, frozenset, tuple)):
        return sorted(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def bundled_path(name: str) -> FsPath:
    return FsPath(str(resources.files("socketstore").joinpath(f"scenarios/{name}.scn")))


def resolve_scenario(spec: str) -> FsPath:
    """A path, or the name of a bundled scenario."""
    p = FsPath(spec)
    if p.exists():
        return p
    name = p.stem if p.suffix == ".scn" else spec
    if name in BUNDLED:
        return bundled_path(name)
    raise ScenarioError(None, f"no scenario at {spec!r}")


def load_scenario(path: str | FsPath) -> tuple[dict, FsPath]:
    path = resolve_scenario(str(path))
    try:
        doc = json.loads(path.read_text("utf-8"))
    except (OSError, ValueError) as exc:
        raise ScenarioError(None, f"cannot read {path}: {exc}") from None
    return doc, path.parent


def validate(doc: dict) -> None:
    """Static checks: known actions, required fields, ordered steps, names
    defined before use."""
    if not isinstance(doc, dict) or not isinstance(doc.get("timeline"), list):
        raise ScenarioError(None, "scenario needs a timeline list")
    if "topology" not in doc:
        raise ScenarioError(None, "scenario needs a topology")
    defined: dict[str, set[str]] = {"ent": set(), "device": set(), "conn": set(), "listener": set()}
    last = 0
    modules = doc.get("modules") or {}
    for i, step in enumerate(doc["timeline"]):
        if not isinstance(step, dict):
            raise ScenarioError(i, "step must be an object")
        at = step.get("at_ms")
        if not isinstance(at, int) or isinstance(at, bool) or at < last:
            raise ScenarioError(i, "at_ms must be a non-decreasing integer")
        last = at
        action = step.get("action")
        if action not in ACTIONS:
            raise ScenarioError(i, f"unknown action {action!r}")
        required, defines, refs = ACTIONS[action]
        for f in required:
            if f not in step:
                raise ScenarioError(i, f"{action} needs {f!r}")
        for kind, f in refs:
            if step[f] not in defined[kind]:
                raise ScenarioError(i, f"{kind} {step[f]!r} is not defined by an earlier step")
        if action == "publish" and step["module"] not in modules:
            raise ScenarioError(i, f"module {step['module']!r} is not in the modules table")
        if action == "init_device":
            for ent in step.get("entitlements", ()):
                if ent not in defined["ent"]:
                    raise ScenarioError(i, f"ent {ent!r} is not defined by an earlier step")
        if action == "assert" and "conn" in step and step["conn"] not in defined["conn"]:
            raise ScenarioError(i, f"conn {step['conn']!r} is not defined by an earlier step")
        if defines is not None:
            defined[defines[0]].add(step[defines[1]])


class _World:
    def __init__(self, doc: dict, base: FsPath, seed: int):
        self.doc = doc
        self.now = 0
        self.rng = random.Random(seed)
        self.events: list[dict] = []
        topo_doc = doc["topology"]
        if isinstance(topo_doc, str):
            try:
                topo_doc = json.loads((base / topo_doc).read_text("utf-8"))
            except (OSError, ValueError) as exc:
                raise ScenarioError(None, f"cannot read topology: {exc}") from None
        try:
            topology = load_topology(topo_doc)
        except SocketStoreError as exc:
            raise ScenarioError(None, f"bad topology: {exc.message}") from None
        clock = lambda: self.now  # noqa: E731
        self.network = NetworkControl(topology, trace=self.events.append)
        self.registry = Registry(
            RegistryConfig.from_dict(doc.get("registry") or {}),
            clock=clock,
            manifest=load_manifest(),
            trace=self.events.append,
        )
        self.peers = PeerTable()
        self.proxy = StoreProxy(
            self.registry,
            self.network,
            self.peers,
            PoolPolicy.from_dict(doc.get("policy") or {}),
            clock=clock,
            trace=self.events.append,
        )
        self.directory = StoreDirectory()
        self.stores = list(doc.get("stores") or ["store"])
        for name in self.stores:
            self.directory.register(name, StoreService(self.registry, self.proxy))
        self.peer_objs: dict[tuple[str, int], Any] = {}
        for p in doc.get("peers") or ():
            self._add_peer(p["ip"], p["port"], p.get("kind", "echo"))
        self.ents: dict = {}
        self.devices: dict[str, DsoRuntime] = {}
        self.caches: dict[str, ToCache] = {}
        self.links: dict[str, list[LoopbackLink]] = {}
        self.conns: dict = {}
        self.listeners: dict = {}
        self.device_events: list[dict] = []

    def log(self, **rec) -> None:
        self.events.append({"svc": "scenario", "t": self.now, **rec})

    def _add_peer(self, ip: str, port: int, kind: str) -> None:
        peer = {"echo": EchoPeer, "sink": SinkPeer}[kind]()
        self.peers.bind(ip, port, peer)
        self.peer_objs[(ip, int(port))] = peer

    def payload(self, spec: Any) -> bytes:
        if isinstance(spec, str):
            return spec.encode("utf-8")
        if isinstance(spec, dict) and "random" in spec:
            return self.rng.randbytes(int(spec["random"]))
        raise ScenarioError(None, f"bad payload {spec!r}")

    def connector_for(self, device: str) -> Callable[[str], LoopbackLink]:
        def connect(name: str) -> LoopbackLink:
            link = LoopbackLink(self.directory.lookup(name), self.directory, name)
            self.links.setdefault(device, []).append(link)
            return link

        return connect

    def sso(self, conn_name: str, part: str | None = None):
        conn = self.conns[conn_name]
        if not isinstance(conn, ModuleSocket):
            raise SocketStoreError(f"{conn_name} is a {conn.kind}")
        sso = self.proxy.instance(conn.session)
        if part is not None:
            sso = self.proxy.instance(sso.parts[part])
        return sso


def _desc(doc: dict, name: str) -> ModuleDescriptor:
    return ModuleDescriptor.from_dict(doc["modules"][name])


def _act(w: _World, step: dict) -> Any:
    a = step["action"]
    r = w.registry
    if a == "publish":
        desc = _desc(w.doc, step["module"])
        return r.publish_module(desc, step.get("submitter", desc.contributor)).version
    if a == "review":
        return r.review_module(step["module"], step["verdict"]).lifecycle.value
    if a == "purchase":
        ent = r.purchase(step["app"], step["module"], step.get("fingerprint"))
        w.ents[step["as"]] = ent
        return ent.module_key
    if a == "rate":
        r.rate_module(step["module"], Rating(step["rater"], step["stars"], step.get("comment", ""), w.now))
        return round(r.score(step["module"]), 9)
    if a == "deprecate":
        return r.transition_lifecycle(step["module"], "deprecated").lifecycle.value
    if a == "dispose":
        return r.transition_lifecycle(step["module"], "disposed").lifecycle.value
    if a == "compose":
        fields = {k: v for k, v in step.items() if k not in ("at_ms", "action", "parts", "expect_error")}
        return r.compose_modules(step["parts"], fields)
    if a == "init_device":
        name = step["device"]
        cache = w.caches.setdefault(step.get("cache", name), ToCache())
        cfg = DeviceConfig(
            store_endpoints=step.get("endpoints", w.stores),
            app_id=step["app"],
            entitlements=[w.ents[e] for e in step.get("entitlements", ())],
            device_fingerprint=step.get("fingerprint"),
            attach_node=step.get("attach_node"),
            recv_timeout_ms=0,
        )
        rt = init_runtime(cfg, connector=w.connector_for(name), peers=w.peers, cache=cache)
        w.devices[name] = rt
        return {"degraded": rt.degraded, "transfers": rt.transfers}
    if a == "connect":
        rt = w.devices[step["device"]]
        before = len(rt.fallbacks)
        conn = rt.connect(step.get("protocol", "tcp"), step["ip"], step["port"], step.get("module_id"))
        name = step["as"]
        w.conns[name] = conn

        def record(event_type):
            def handler(event):
                w.device_events.append({"conn": name, "type": event_type})
                extra = {} if event_type == "IncomingData" else {"reason": event.get("reason")}
                w.log(op="device_event", conn=name, type=event_type, **extra)

            return handler

        conn.on_event("IncomingData", record("IncomingData"))
        if isinstance(conn, ModuleSocket):
            conn.on_event("ObjectiveViolation", record("ObjectiveViolation"))
        out = {"kind": conn.kind, "session": conn.session}
        if len(rt.fallbacks) > before:
            out["fallback"] = rt.fallbacks[-1]
        return out
    if a == "bind":
        listener = w.devices[step["device"]].bind_listen(step["port"], step.get("module_id"))
        w.listeners[step["as"]] = listener
        return listener.kind
    if a == "send":
        return w.conns[step["conn"]].send(w.payload(step["payload"]))
    if a == "recv":
        data = w.conns[step["conn"]].recv(0)
        return data.decode("utf-8", "backslashreplace")
    if a == "close":
        return w.conns[step["conn"]].close()
    if a == "undo_send":
        return w.conns[step["conn"]].undo_send()
    if a == "redo_send":
        return w.conns[step["conn"]].redo_send()
    if a == "sample":
        return w.conns[step["conn"]].report_sample(step["value"])
    if a == "shutdown":
        return {"close_frames": w.devices[step["device"]].shutdown()}
    if a == "set_link_state":
        ev = w.network.set_link_state(step["link"], step["change"])
        return None if ev is None else ev.seq
    if a == "advance_time":
        w.now += int(step["ms"])
        return w.proxy.sweep_timeouts(w.now)
    if a == "sweep":
        return w.proxy.sweep_timeouts(w.now)
    if a == "store_down":
        w.directory.set_up(step["store"], False)
        return None
    if a == "store_up":
        w.directory.set_up(step["store"], True)
        return None
    if a == "peer":
        w._add_peer(step["ip"], step["port"], step.get("kind", "echo"))
        return None
    if a == "corrupt_cache":
        cache = w.caches[step["cache"]]
        raw = cache._raw(step["module"])
        if raw is None:
            raise ScenarioError(None, f"cache {step['cache']} holds no {step['module']}")
        doc = json.loads(raw[0])
        doc["params"] = {**doc.get("params", {}), "tampered": True}
        cache.write_raw(step["module"], json.dumps(doc, sort_keys=True))
        return None
    raise AssertionError(a)


# -- assertions -----------------------------------------------------------------
def _check(w: _World, step: dict) -> Any:
    c = step["check"]
    if c == "kind":
        return w.conns[step["conn"]].kind
    if c == "peer_received":
        peer = w.peer_objs[(step["ip"], int(step["port"]))]
        return [p.decode("utf-8", "backslashreplace") for p in peer.received]
    if c == "peer_digest":
        peer = w.peer_objs[(step["ip"], int(step["port"]))]
        return sha256_hex(b"".join(peer.received))
    if c == "path":
        sso = w.sso(step["conn"], step.get("part"))
        path = sso.pool.get(step.get("role", "main"))
        return None if path is None else list(path.nodes)
    if c == "session_count":
        return w.proxy.session_count()
    if c == "allocation_count":
        return w.network.allocation_count()
    if c == "constructions":
        return w.proxy.constructions.get((step["module"], step["module_id"]), 0)
    if c == "total_constructions":
        return w.proxy.total_constructions()
    if c == "trace_count":
        where = step.get("where", {})
        return sum(1 for e in w.events if e.get("svc") == step.get("svc", "proxy") and all(e.get(k) == v for k, v in where.items()))
    if c == "losses":
        return w.sso(step["conn"], step.get("part")).variables.get("losses", 0)
    if c == "device_events":
        return sum(1 for e in w.device_events if e["conn"] == step["conn"] and e["type"] == step["type"])
    if c == "lifecycle":
        return w.registry.lifecycle(step["module"]).value
    if c == "rank":
        return [k for k, _ in w.registry.rank_modules(step.get("query"))]
    if c == "transfers":
        return w.devices[step["device"]].transfers
    if c == "fallbacks":
        return w.devices[step["device"]].fallbacks
    if c == "attainment":
        s = w.registry.stats(step["module"])
        return [s.samples, s.attained]
    if c == "pooled":
        return sorted(s.sso_id for s in w.proxy.instances("pooled"))
    raise ScenarioError(None, f"unknown check {c!r}")


def _final(w: _World) -> dict:
    reg = w.registry
    return {
        "time_ms": w.now,
        "rank": [[k, round(s, 9)] for k, s in reg.rank_modules()],
        "attainment": {
            k: {"samples": s.samples, "attained": s.attained, "ratio": round(s.ratio, 9)}
            for k, s in sorted(reg.attainment.items())
        },
        "lifecycle": {k: d.lifecycle.value for k, d in sorted(reg.modules.items())},
        "sessions": w.proxy.session_count(),
        "pooled": len(w.proxy.instances("pooled")),
        "constructions": {f"{k}/{m}": n for (k, m), n in sorted(w.proxy.constructions.items())},
        "allocations": w.network.allocation_count(),
        "handler_errors": w.proxy.handler_errors,
        "devices": {
            name: {
                "transfers": rt.transfers,
                "fallbacks": rt.fallbacks,
                "frames": {
                    "bytes_sent": sum(l.bytes_sent for l in w.links.get(name, ())),
                    "bytes_received": sum(l.bytes_received for l in w.links.get(name, ())),
                    "kinds": dict(sorted(sum((l.sent_kinds for l in w.links.get(name, ())), Counter()).items())),
                },
            }
            for name, rt in sorted(w.devices.items())
        },
    }


def _clean(value: Any) -> Any:
    # normalize step results for the trace (bytes, tuples, floats)
    return json.loads(json.dumps(value, sort_keys=True, default=_default))


def run_document(doc: dict, base: FsPath | str = ".", seed: int | None = None, name: str = "scenario") -> TraceReport:
    validate(doc)
    seed = doc.get("seed", 0) if seed is None else seed
    w = _World(doc, FsPath(base), seed)
    report = TraceReport(doc.get("name", name), seed)
    for i, step in enumerate(doc["timeline"]):
        if step["at_ms"] > w.now:
            w.now = step["at_ms"]
            swept = w.proxy.sweep_timeouts(w.now)
            if swept:
                w.log(op="sweep", closed=_clean(swept))
        args = {k: v for k, v in step.items() if k not in ("at_ms", "action")}
        if step["action"] == "assert":
            try:
                actual = _clean(_check(w, step))
            except ScenarioError as exc:
                raise ScenarioError(i, exc.message) from None
            except SocketStoreError as exc:
                actual = {"error": exc.code}
            ok = actual == step.get("expect")
            report.assertions.append({"step": i, "check": step["check"], "expected": step.get("expect"), "actual": actual, "ok": ok})
            w.log(op="assert", step=i, check=step["check"], ok=ok)
            continue
        expected_error = step.get("expect_error")
        try:
            result = _clean(_act(w, step))
        except ScenarioError as exc:
            raise ScenarioError(i, exc.message) from None
        except SocketStoreError as exc:
            w.log(op=step["action"], step=i, args=_clean(args), error=exc.code)
            ok = exc.code == expected_error
            detail = exc.details.get("reason")
            report.assertions.append(
                {"step": i, "check": "error", "expected": expected_error, "actual": exc.code, "ok": ok, "detail": detail}
            )
            continue
        w.log(op=step["action"], step=i, args=_clean(args), result=result)
        if expected_error is not None:
            report.assertions.append({"step": i, "check": "error", "expected": expected_error, "actual": None, "ok": False})
    report.final = _clean(_final(w))
    report.events = _clean(w.events)
    return report


def run_scenario(path: str | FsPath, seed: int | None = None) -> TraceReport:
    doc, base = load_scenario(path)
    return run_document(doc, base, seed, name=FsPath(str(path)).stem)


def report_digest(report: TraceReport) -> str:
    return sha256_hex(canonical_json(json.loads(report.to_json())))
