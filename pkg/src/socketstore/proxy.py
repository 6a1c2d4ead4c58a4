"""Store Proxy: hosts store-side socket objects (SSOs).

It builds an SSO when a device opens a session, pools or destroys it on
close depending on how popular its parameterization is, sweeps idle
instances, routes Network Control events to the SSOs whose PathPool they
touch, and records objective samples.
"""

from __future__ import annotations

import copy
import itertools
import logging
import math
import threading
from collections import defaultdict, deque
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Callable, Iterable, Mapping

from . import behaviors as bh
from .core import Entitlement, Lifecycle, ModuleDescriptor, PerformanceObjective, SsoBehaviorRef
from .errors import (
    AllocationFailed,
    ConnectFailed,
    DelegationRefused,
    InvalidArgument,
    InvalidSession,
    NoRoute,
    NotFound,
    SocketStoreError,
    UnknownParameterization,
    Unauthorized,
    error_from_body,
)
from .fabric import BlobStore, PeerTable
from .netsim import NetworkEvent, Path

log = logging.getLogger(__name__)

EWMA_ALPHA = 0.2
ACTIVE, POOLED, DESTROYED = "active", "pooled", "destroyed"


@dataclass(frozen=True)
class PoolPolicy:
    window_ms: int = 60_000
    reuse_threshold: int = 3
    inactivity_timeout_ms: int = 30_000

    def __post_init__(self):
        if min(self.window_ms, self.reuse_threshold, self.inactivity_timeout_ms) <= 0:
            raise InvalidArgument("pool policy fields must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "PoolPolicy":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


class PathPool:
    """Paths held by one SSO, keyed by the role the behavior gave them."""

    def __init__(self) -> None:
        self._paths: dict[str, Path] = {}

    def __len__(self) -> int:
        return len(self._paths)

    def __contains__(self, role: str) -> bool:
        return role in self._paths

    def get(self, role: str) -> Path | None:
        return self._paths.get(role)

    def put(self, role: str, path: Path) -> None:
        self._paths[role] = path

    def pop(self, role: str) -> Path:
        return self._paths.pop(role)

    def roles(self) -> list[str]:
        return list(self._paths)

    @property
    def paths(self) -> list[Path]:
        return list(self._paths.values())

    def links(self) -> set[str]:
        return {lid for p in self._paths.values() for lid in p.links}

    def affected_by(self, link_id: str) -> bool:
        return any(link_id in p.links for p in self._paths.values())

    def to_dict(self) -> dict:
        return {role: p.to_dict() for role, p in self._paths.items()}


@dataclass
class SsoInstance:
    sso_id: str
    module_key: str
    module_id: str
    constants: Mapping[str, Any]
    behavior: bh.NetworkBehavior
    objective: PerformanceObjective
    src: str
    dst: str
    dst_addr: dict
    version: int
    variables: dict = field(default_factory=dict)
    pool: PathPool = field(default_factory=PathPool)
    subscriptions: list[int] = field(default_factory=list)
    last_active: int = 0
    status: str = ACTIVE
    pooled_at: int = 0
    parent: str | None = None
    chain_next: str | None = None
    parts: dict[str, str] = field(default_factory=dict)
    deferred: list[NetworkEvent] = field(default_factory=list)
    errors: int = 0
    ewma: float | None = None
    samples: list[float] = field(default_factory=list)
    attained: int = 0
    forwarded: int = 0
    lost: int = 0


@dataclass(frozen=True)
class SessionOpened:
    sso_id: str
    reused: bool = False


@dataclass(frozen=True)
class SampleReport:
    sso_id: str
    samples: int
    attained: int
    ewma: float
    violated: bool
    module_samples: int
    module_attained: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class _View:
    """Read-only window a behavior hook gets onto its instance and the network."""

    def __init__(self, proxy: "StoreProxy", sso: SsoInstance):
        self._net = proxy.network
        self._sso = sso
        self.constants = sso.constants
        self.objective = sso.objective
        self.src = sso.src
        self.dst = sso.dst

    def roles(self):
        return self._sso.pool.roles()

    def path(self, role):
        return self._sso.pool.get(role)

    def path_up(self, role):
        p = self._sso.pool.get(role)
        return p is not None and self._net.path_is_up(p)

    def latency(self, role):
        p = self._sso.pool.get(role)
        return math.inf if p is None else self._net.path_metrics(p)[0]

    def best_path(self, constraints=None):
        try:
            nodes, _, latency = self._net.best_path(self.src, self.dst, constraints)
        except (NoRoute, NotFound):
            return None
        return nodes, latency

    def disjoint_pair(self):
        try:
            return self._net.disjoint_pair(self.src, self.dst)
        except (NoRoute, NotFound):
            return None


class StoreProxy:
    def __init__(
        self,
        registry,
        network,
        peers: PeerTable | None = None,
        policy: PoolPolicy | None = None,
        clock: Callable[[], int] | None = None,
        blobs: BlobStore | None = None,
        trace: Callable[[dict], None] | None = None,
    ):
        self.registry = registry
        self.network = network
        self.peers = peers or PeerTable()
        self.policy = policy or PoolPolicy()
        self.blobs = blobs or BlobStore()
        self._clock = clock or (lambda: 0)
        self._trace = trace
        self._lock = threading.RLock()
        self._ids = itertools.count(1)
        self._sub_ids = itertools.count(1)
        self._ssos: dict[str, SsoInstance] = {}
        self._destroyed: set[str] = set()
        self._subs: dict[int, tuple[str, frozenset[str]]] = {}
        self._sinks: dict[str, Callable[[dict], None]] = {}
        self._channels: dict[str, Callable[[bytes], None]] = {}
        self._opens: dict[tuple[str, str], deque[int]] = defaultdict(deque)
        self._first_open: dict[tuple[str, str], int] = {}
        self.constructions: dict[tuple[str, str], int] = defaultdict(int)
        self.open_count: dict[tuple[str, str], int] = defaultdict(int)
        self.handler_errors = 0
        self._now_hint = 0
        self._net_sub = network.subscribe(self.deliver_event)

    # -- bookkeeping ------------------------------------------------------
    def _now(self, now: int | None) -> int:
        now = self._clock() if now is None else now
        self._now_hint = now
        return now

    def _record(self, **rec) -> None:
        if self._trace is not None:
            self._trace({"svc": "proxy", **rec})

    def instance(self, sso_id: str) -> SsoInstance:
        try:
            return self._ssos[sso_id]
        except KeyError:
            raise InvalidSession(f"unknown or destroyed session {sso_id}") from None

    def instances(self, status: str | None = None) -> list[SsoInstance]:
        with self._lock:
            return [s for s in self._ssos.values() if status is None or s.status == status]

    def session_count(self) -> int:
        """Active device-facing sessions (nested part instances excluded)."""
        with self._lock:
            return sum(1 for s in self._ssos.values() if s.status == ACTIVE and s.parent is None)

    def total_constructions(self) -> int:
        return sum(self.constructions.values())

    def _tree(self, sso: SsoInstance) -> list[SsoInstance]:
        out = [sso]
        for child_id in sso.parts.values():
            child = self._ssos.get(child_id)
            if child is not None:
                out.extend(self._tree(child))
        return out

    def _root(self, sso: SsoInstance) -> SsoInstance:
        while sso.parent is not None:
            sso = self._ssos[sso.parent]
        return sso

    # -- popularity -------------------------------------------------------
    def popularity(self, key: tuple[str, str], now: int) -> float:
        """Opens per window for one parameterization.

        Counts opens in [now - window, now]; while the history is younger than
        one window the count is scaled up to a full window.
        """
        opens = self._opens[key]
        w = self.policy.window_ms
        while opens and opens[0] < now - w:
            opens.popleft()
        if key not in self._first_open:
            return 0.0
        count = sum(1 for t in opens if t <= now)
        age = now - self._first_open[key]
        if age >= w:
            return float(count)
        return count * w / max(age, 1)

    # -- sessions -------------------------------------------------------
    def open_session(
        self,
        entitlement: Entitlement,
        module_key: str,
        module_id: str,
        dst: dict,
        now: int | None = None,
        src: str | None = None,
        fingerprint: str | None = None,
        sink: Callable[[dict], None] | None = None,
    ) -> SessionOpened:
        with self._lock:
            now = self._now(now)
            if entitlement.module_key != module_key or not self.registry.verify(entitlement, fingerprint):
                raise Unauthorized(f"entitlement does not grant {module_key}")
            desc = self.registry.descriptor(module_key)
            if desc.lifecycle not in (Lifecycle.PUBLISHED, Lifecycle.DEPRECATED):
                raise NotFound(f"module {module_key} is {desc.lifecycle.value}")
            if module_id not in desc.parameterizations:
                raise UnknownParameterization(f"{module_key} has no parameterization {module_id!r}")
            try:
                src_node = self.network.resolve(src or dst.get("src") or "")
                dst_node = self.network.resolve(dst["ip"])
            except (NotFound, KeyError) as exc:
                raise AllocationFailed(f"cannot place session: {exc}") from None
            key = (module_key, module_id)
            pooled = self._find_pooled(key, src_node, dst_node, dst)
            reuse = pooled is not None and self.popularity(key, now) >= self.policy.reuse_threshold
            if pooled is not None and not reuse:
                self._record(t=now, op="pool_evict", sso=pooled.sso_id, reason="unpopular")
                self._teardown(pooled, now, "unpopular")
            self._opens[key].append(now)
            self._first_open.setdefault(key, now)
            self.open_count[key] += 1
            if reuse:
                self._reactivate(pooled, now, sink)
                return SessionOpened(pooled.sso_id, reused=True)
            sso = self._construct(desc, module_id, src_node, dst_node, dst, now)
            if sink is not None:
                self._sinks[sso.sso_id] = sink
            return SessionOpened(sso.sso_id)

    def _find_pooled(self, key, src, dst_node, dst_addr) -> SsoInstance | None:
        for sso in self._ssos.values():
            if (
                sso.status == POOLED
                and sso.parent is None
                and (sso.module_key, sso.module_id) == key
                and (sso.src, sso.dst) == (src, dst_node)
                and (sso.dst_addr.get("ip"), sso.dst_addr.get("port")) == (dst_addr.get("ip"), dst_addr.get("port"))
            ):
                return sso
        return None

    def _construct(
        self,
        desc: ModuleDescriptor,
        module_id: str,
        src: str,
        dst: str,
        dst_addr: dict,
        now: int,
        parent: SsoInstance | None = None,
        chain_next: str | None = None,
    ) -> SsoInstance:
        ref = desc.network_behavior or SsoBehaviorRef("relay")
        constants = MappingProxyType(copy.deepcopy({**ref.params, **desc.parameterizations[module_id]}))
        sso = SsoInstance(
            sso_id=f"sso-{next(self._ids)}",
            module_key=desc.module_key,
            module_id=module_id,
            constants=constants,
            behavior=bh.network_behavior(ref.behavior_id),
            objective=desc.objective,
            src=src,
            dst=dst,
            dst_addr=dict(dst_addr),
            version=desc.version,
            last_active=now,
            parent=parent.sso_id if parent else None,
            chain_next=chain_next,
        )
        self._ssos[sso.sso_id] = sso
        if parent is not None:
            parent.parts[desc.module_key] = sso.sso_id
        try:
            state, actions = sso.behavior.on_construct(copy.deepcopy(sso.variables), _View(self, sso))
            sso.variables = state
            self._execute(sso, actions, now)
            if chain_next is None and not isinstance(sso.behavior, bh.Composition):
                self._open_channel(sso)
        except SocketStoreError as exc:
            self._teardown(sso, now, "construct_failed")
            if isinstance(exc, AllocationFailed):
                raise
            raise AllocationFailed(f"{desc.module_key}: {exc.message}") from exc
        sid = next(self._sub_ids)
        self._subs[sid] = (sso.sso_id, frozenset(sso.behavior.event_types))
        sso.subscriptions.append(sid)
        self.constructions[(desc.module_key, module_id)] += 1
        self._record(
            t=now,
            op="construct",
            sso=sso.sso_id,
            module=desc.module_key,
            module_id=module_id,
            parent=sso.parent,
            paths={r: list(sso.pool.get(r).nodes) for r in sso.pool.roles()},
        )
        return sso

    def _open_channel(self, sso: SsoInstance) -> None:
        a = sso.dst_addr
        sso_id = sso.sso_id
        self._channels[sso_id] = self.peers.attach(
            a["ip"], a["port"], lambda payload: self._incoming(sso_id, payload), a.get("protocol", "tcp")
        )

    def _reactivate(self, sso: SsoInstance, now: int, sink) -> None:
        for member in self._tree(sso):
            member.status = ACTIVE
            member.last_active = now
        if sink is not None:
            self._sinks[sso.sso_id] = sink
        self._record(t=now, op="reactivate", sso=sso.sso_id)
        for member in self._tree(sso):
            pending, member.deferred = member.deferred, []
            for ev in pending:
                self._record(t=now, op="replay", sso=member.sso_id, seq=ev.seq)
                self._run_handler(member, ev, now)

    def close_session(self, sso_id: str, reason: str = "explicit", now: int | None = None) -> str:
        if reason not in ("explicit", "timeout"):
            raise InvalidArgument(f"unknown close reason {reason!r}")
        with self._lock:
            now = self._now(now)
            sso = self._ssos.get(sso_id)
            if sso is None or sso.status != ACTIVE or sso.parent is not None:
                raise InvalidSession(f"session {sso_id} is not open")
            key = (sso.module_key, sso.module_id)
            popularity = self.popularity(key, now)
            self._sinks.pop(sso_id, None)
            if popularity >= self.policy.reuse_threshold:
                for member in self._tree(sso):
                    member.status = POOLED
                    member.pooled_at = now
                outcome = POOLED
            else:
                self._teardown(sso, now, reason)
                outcome = DESTROYED
            self._record(t=now, op="close", sso=sso_id, reason=reason, outcome=outcome, popularity=round(popularity, 6))
            return outcome

    def _teardown(self, sso: SsoInstance, now: int, reason: str) -> None:
        for child_id in list(sso.parts.values()):
            child = self._ssos.get(child_id)
            if child is not None:
                self._teardown(child, now, reason)
        try:
            state, actions = sso.behavior.on_destruct(copy.deepcopy(sso.variables), _View(self, sso))
            sso.variables = state
            self._execute(sso, [a for a in actions if not isinstance(a, (bh.Allocate, bh.Reserve))], now)
        except Exception:
            log.exception("destructor of %s failed", sso.sso_id)
        for role in sso.pool.roles():
            path = sso.pool.pop(role)
            self.network.release_path(path.path_id)
        for sid in sso.subscriptions:
            self._subs.pop(sid, None)
        sso.subscriptions.clear()
        self.blobs.drop_session(sso.sso_id)
        self._channels.pop(sso.sso_id, None)
        self._sinks.pop(sso.sso_id, None)
        sso.status = DESTROYED
        sso.deferred.clear()
        self._ssos.pop(sso.sso_id, None)
        self._destroyed.add(sso.sso_id)
        self._record(t=now, op="destroy", sso=sso.sso_id, reason=reason)

    def sweep_timeouts(self, now: int | None = None) -> list[tuple[str, str]]:
        with self._lock:
            now = self._now(now)
            timeout = self.policy.inactivity_timeout_ms
            out = []
            for sso in [s for s in self._ssos.values() if s.parent is None]:
                if sso.status == ACTIVE and now - sso.last_active > timeout:
                    out.append((sso.sso_id, self.close_session(sso.sso_id, "timeout", now)))
                elif sso.status == POOLED and now - sso.pooled_at > 2 * timeout:
                    self._teardown(sso, now, "pool_timeout")
                    out.append((sso.sso_id, DESTROYED))
            return out

    # -- data path -----------------------------------------------------------
    def data(self, sso_id: str, request: dict, now: int | None = None) -> dict:
        with self._lock:
            now = self._now(now)
            sso = self._ssos.get(sso_id)
            if sso is None or sso.status != ACTIVE or sso.parent is not None:
                raise InvalidSession(f"session {sso_id} is not open")
            sso.last_active = now
            return self._handle(sso, request, now)

    def _handle(self, sso: SsoInstance, request: dict, now: int) -> dict:
        state, actions = sso.behavior.on_data(copy.deepcopy(sso.variables), request, _View(self, sso))
        sso.variables = state
        return self._execute(sso, actions, now)

    def delegate(self, sso_id: str, part_module_key: str, request: dict, now: int | None = None) -> dict:
        """Forward ``request`` to the nested session for one part of a composed module."""
        with self._lock:
            now = self._now(now)
            sso = self._ssos.get(sso_id)
            if sso is None or sso.status == DESTROYED:
                raise InvalidSession(f"session {sso_id} is not open")
            desc = self.registry.descriptor(sso.module_key)
            if part_module_key not in desc.composed_of:
                raise DelegationRefused(f"{part_module_key} is not a part of {sso.module_key}")
            child_id = sso.parts.get(part_module_key)
            if child_id is None:
                child = self._construct_part(sso, part_module_key, list(desc.composed_of), now)
            else:
                child = self._ssos[child_id]
            self._record(t=now, op="delegate", sso=sso.sso_id, part=part_module_key, to=child.sso_id, request=request.get("op"))
            if request.get("op") == "open":
                return {"part_sso": child.sso_id}
            return self._handle(child, request, now)

    def _construct_part(self, parent: SsoInstance, part: str, parts: list[str], now: int) -> SsoInstance:
        desc = self.registry.descriptor(part)
        if desc.lifecycle not in (Lifecycle.PUBLISHED, Lifecycle.DEPRECATED):
            raise DelegationRefused(f"part {part} is {desc.lifecycle.value}")
        chosen = dict(parent.constants.get("part_module_ids", {})).get(part)
        module_id = chosen if chosen is not None else sorted(desc.parameterizations)[0]
        idx = parts.index(part)
        chain_next = parts[idx + 1] if idx + 1 < len(parts) else None
        return self._construct(desc, module_id, parent.src, parent.dst, parent.dst_addr, now, parent=parent, chain_next=chain_next)

    def _forward(self, sso: SsoInstance, payload: bytes, role: str, now: int) -> bool:
        if sso.chain_next is not None:
            reply = self.delegate(sso.parent, sso.chain_next, {"op": "send", "payload": payload}, now)
            return bool(reply.get("delivered", True))
        path = sso.pool.get(role)
        if path is None or not self.network.path_is_up(path):
            sso.lost += 1
            self._record(t=now, op="drop", sso=sso.sso_id, role=role, bytes=len(payload))
            return False
        channel = self._channels.get(sso.sso_id)
        if channel is None:
            sso.lost += 1
            self._record(t=now, op="drop", sso=sso.sso_id, role=role, bytes=len(payload))
            return False
        sso.forwarded += 1
        self._record(t=now, op="forward", sso=sso.sso_id, path=list(path.nodes), bytes=len(payload))
        channel(payload)
        return True

    def _incoming(self, sso_id: str, payload: bytes) -> None:
        sso = self._ssos.get(sso_id)
        if sso is None:
            return
        self._push(sso, {"type": "IncomingData", "payload": payload})

    def _push(self, sso: SsoInstance, event: dict) -> None:
        root = self._root(sso)
        sink = self._sinks.get(root.sso_id) if root.status == ACTIVE else None
        if sink is None:
            self._record(t=self._now_hint, op="push_dropped", sso=root.sso_id, type=event.get("type"))
            return
        if event.get("type") != "IncomingData":
            self._record(t=self._now_hint, op="notify", sso=root.sso_id, **{k: v for k, v in event.items() if k != "payload"})
        sink(event)

    def _execute(self, sso: SsoInstance, actions: Iterable, now: int) -> dict:
        reply: dict = {}
        for a in actions:
            if isinstance(a, bh.Allocate):
                path = self.network.allocate_path(sso.src, sso.dst, a.constraints or None, owner=sso.sso_id)
                sso.pool.put(a.role, path)
                self._record(t=now, op="pool_add", sso=sso.sso_id, role=a.role, path=list(path.nodes))
            elif isinstance(a, bh.Reserve):
                path = self.network.reserve_path(a.nodes, owner=sso.sso_id)
                sso.pool.put(a.role, path)
                self._record(t=now, op="pool_add", sso=sso.sso_id, role=a.role, path=list(path.nodes))
            elif isinstance(a, bh.Release):
                path = sso.pool.pop(a.role)
                self.network.release_path(path.path_id)
                self._record(t=now, op="pool_remove", sso=sso.sso_id, role=a.role, path=list(path.nodes))
            elif isinstance(a, bh.Forward):
                delivered = self._forward(sso, a.payload, a.role, now)
                reply["delivered"] = reply.get("delivered", True) and delivered
            elif isinstance(a, bh.Stash):
                self.blobs.put(sso.sso_id, a.key, a.payload)
                self._record(t=now, op="stash", sso=sso.sso_id, key=a.key)
            elif isinstance(a, bh.Drop):
                self.blobs.delete(sso.sso_id, a.key)
                self._record(t=now, op="blob_drop", sso=sso.sso_id, key=a.key)
            elif isinstance(a, bh.Flush):
                payload = self.blobs.get(sso.sso_id, a.key)
                self.blobs.delete(sso.sso_id, a.key)
                self._record(t=now, op="flush", sso=sso.sso_id, key=a.key)
                self._forward(sso, payload, a.role, now)
            elif isinstance(a, bh.Sample):
                report = self._sample(sso, a.value, now)
                reply["sample"] = report.to_dict()
            elif isinstance(a, bh.Delegate):
                reply.update(self.delegate(sso.sso_id, a.part, a.request, now))
            elif isinstance(a, bh.Notify):
                self._push(sso, a.event)
            elif isinstance(a, bh.Reply):
                reply.update(a.body)
            elif isinstance(a, bh.Note):
                self._record(t=now, op="note", sso=sso.sso_id, **a.info)
            elif isinstance(a, bh.Fail):
                raise error_from_body({"code": a.code, "message": a.message})
            else:
                raise TypeError(f"unknown action {a!r}")
        return reply

    # -- events ----------------------------------------------------------------
    def deliver_event(self, event: NetworkEvent) -> list[str]:
        """Run the path-event handler of every active SSO whose PathPool holds
        ``event.link_id``; pooled ones queue the event for reactivation."""
        with self._lock:
            now = self._now_hint
            subscribed = defaultdict(set)
            for sso_id, types in self._subs.values():
                subscribed[sso_id] |= types
            ran = []
            for sso in list(self._ssos.values()):
                if sso.status == DESTROYED or not sso.pool.affected_by(event.link_id):
                    continue
                if event.event_type not in subscribed.get(sso.sso_id, ()):
                    continue
                if sso.status == POOLED:
                    sso.deferred.append(event)
                    self._record(t=now, op="defer", sso=sso.sso_id, seq=event.seq)
                    continue
                self._run_handler(sso, event, now)
                ran.append(sso.sso_id)
            return ran

    def _run_handler(self, sso: SsoInstance, event: NetworkEvent, now: int) -> None:
        self._record(t=now, op="handler", sso=sso.sso_id, seq=event.seq, event=event.event_type, link=event.link_id)
        try:
            state, actions = sso.behavior.on_path_event(copy.deepcopy(sso.variables), event, _View(self, sso))
            sso.variables = state
            self._execute(sso, actions, now)
        except Exception as exc:
            sso.errors += 1
            self.handler_errors += 1
            log.warning("handler of %s failed on event %s: %s", sso.sso_id, event.seq, exc)
            self._record(t=now, op="handler_error", sso=sso.sso_id, seq=event.seq, error=type(exc).__name__)

    # -- monitoring -------------------------------------------------------------
    def record_sample(self, sso_id: str, metric_value: float, now: int | None = None) -> SampleReport:
        with self._lock:
            now = self._now(now)
            sso = self._ssos.get(sso_id)
            if sso is None or sso.status != ACTIVE:
                raise InvalidSession(f"session {sso_id} is not open")
            return self._sample(sso, metric_value, now)

    def _sample(self, sso: SsoInstance, value: float, now: int) -> SampleReport:
        ok = sso.objective.satisfied_by(value)
        sso.samples.append(value)
        sso.attained += 1 if ok else 0
        sso.ewma = value if sso.ewma is None else EWMA_ALPHA * value + (1 - EWMA_ALPHA) * sso.ewma
        sso.last_active = now
        root = self._root(sso)
        root.last_active = now
        stats = self.registry.record_sample(sso.module_key, ok)
        violated = not sso.objective.satisfied_by(sso.ewma)
        report = SampleReport(sso.sso_id, len(sso.samples), sso.attained, sso.ewma, violated, stats.samples, stats.attained)
        self._record(t=now, op="sample", sso=sso.sso_id, value=value, attained=ok, ewma=round(sso.ewma, 9), violated=violated)
        if violated:
            self._push(sso, {"type": "ObjectiveViolation", "reason": "Sample", "ewma": sso.ewma, "bound": sso.objective.bound})
        return report
