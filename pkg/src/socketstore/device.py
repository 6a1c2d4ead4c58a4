"""Device-side runtime: TO cache, module connections with legacy fallback.

A connection asked for with a ``module_id`` becomes a ``ModuleSocket`` when
the cached transferable object resolves, its behavior starts, and the store
opens a session. Any failure along that way yields a ``LegacySocket`` that
talks to the peer directly, so callers always get a working socket and can
tell which kind with ``isinstance`` or ``conn.kind``.
"""

from __future__ import annotations

import json
import logging
import os
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Any, Callable, Iterable

from . import behaviors as bh
from .core import Entitlement, TransferableObject
from .errors import (
    ConnectFailed,
    ConnectionClosed,
    FrameTooLarge,
    InvalidArgument,
    RecvTimeout,
    SocketStoreError,
    StoreUnreachable,
    Unsupported,
    UnknownParameterization,
    ValidationFailed,
)
from .fabric import PeerTable
from .service import b64, unb64
from .wire import MAX_FRAME, Message

log = logging.getLogger(__name__)

EVENT_KINDS = ("IncomingData", "ObjectiveViolation")


@dataclass
class DeviceConfig:
    store_endpoints: list[str]
    app_id: str
    entitlements: list[Entitlement] = field(default_factory=list)
    device_fingerprint: str | None = None
    attach_node: str | None = None
    ip: str | None = None
    cache_dir: str | None = None
    recv_timeout_ms: int = 1000

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceConfig":
        return cls(
            store_endpoints=list(d["store_endpoints"]),
            app_id=d["app_id"],
            entitlements=[Entitlement.from_dict(e) for e in d.get("entitlements", ())],
            device_fingerprint=d.get("device_fingerprint"),
            attach_node=d.get("attach_node"),
            ip=d.get("ip"),
            cache_dir=d.get("cache_dir"),
            recv_timeout_ms=d.get("recv_timeout_ms", 1000),
        )


class ToCache:
    """module_key -> TransferableObject, on disk when ``directory`` is set.

    Entries are re-verified on every load; a bad checksum or a version file
    that disagrees discards the entry.
    """

    def __init__(self, directory: str | os.PathLike | None = None):
        self.directory = FsPath(directory) if directory is not None else None
        self._mem: dict[str, tuple[str, str]] = {}
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
        self.discarded = 0

    def _files(self, key: str) -> tuple[FsPath, FsPath]:
        return self.directory / f"{key}.to.json", self.directory / f"{key}.ver"

    def _raw(self, key: str) -> tuple[str, str] | None:
        if self.directory is None:
            return self._mem.get(key)
        to_file, ver_file = self._files(key)
        if not to_file.exists():
            return None
        ver = ver_file.read_text("utf-8").strip() if ver_file.exists() else ""
        return to_file.read_text("utf-8"), ver

    def write_raw(self, key: str, text: str, version: str | None = None) -> None:
        """Store bytes as-is; used for writes and to inject corruption."""
        if self.directory is None:
            old_version = self._mem.get(key, ("", ""))[1]
            self._mem[key] = (text, old_version if version is None else version)
            return
        to_file, ver_file = self._files(key)
        to_file.write_text(text, "utf-8")
        if version is not None:
            ver_file.write_text(version, "utf-8")

    def load(self, key: str) -> TransferableObject | None:
        raw = self._raw(key)
        if raw is None:
            return None
        text, ver = raw
        try:
            to = TransferableObject.from_dict(json.loads(text))
            ok = to.module_key == key and to.verify() and ver == str(to.version)
        except (ValueError, KeyError, TypeError, AttributeError):
            ok = False
        if not ok:
            log.warning("discarding corrupt cache entry for %s", key)
            self.discard(key)
            return None
        return to

    def store(self, to: TransferableObject) -> None:
        self.write_raw(to.module_key, json.dumps(to.to_dict(), sort_keys=True), str(to.version))

    def discard(self, key: str) -> None:
        self.discarded += 1
        if self.directory is None:
            self._mem.pop(key, None)
            return
        for f in self._files(key):
            f.unlink(missing_ok=True)

    def keys(self) -> list[str]:
        if self.directory is None:
            return sorted(self._mem)
        return sorted(p.name[: -len(".to.json")] for p in self.directory.glob("*.to.json"))


class DsoRuntime:
    def __init__(
        self,
        config: DeviceConfig,
        connector: Callable[[str], Any],
        peers: PeerTable | None = None,
        cache: ToCache | None = None,
    ):
        if not config.store_endpoints:
            raise InvalidArgument("at least one store endpoint is required")
        self.config = config
        self.app_id = config.app_id
        self.store_endpoints = list(config.store_endpoints)
        self.entitlements: dict[str, Entitlement] = {e.module_key: e for e in config.entitlements}
        self.to_cache = cache if cache is not None else ToCache(config.cache_dir)
        self.peers = peers if peers is not None else PeerTable()
        self._connector = connector
        self.link = None
        self.endpoint: str | None = None
        self.transfers = 0
        self.to_bytes = 0
        self.fallbacks: list[str] = []
        self.connections: list[Connection] = []
        self._sessions: dict[str, ModuleSocket] = {}
        self._lock = threading.RLock()
        self.dispatch_lock = threading.RLock()

    @property
    def degraded(self) -> bool:
        return self.link is None

    @property
    def ip(self) -> str:
        return self.config.ip or self.config.attach_node or self.app_id

    def _attach(self) -> None:
        for endpoint in self.store_endpoints:
            try:
                link = self._connector(endpoint)
                link.request("Hello", {"protocol": 1, "app_id": self.app_id})
            except (SocketStoreError, OSError) as exc:
                log.info("store endpoint %s unusable: %s", endpoint, exc)
                continue
            self.link, self.endpoint = link, endpoint
            link.on_push(self._on_push)
            return

    def refresh(self, module_key: str) -> str:
        """Bring one cached TO up to date; returns the store's status."""
        ent = self.entitlements[module_key]
        cached = self.to_cache.load(module_key)
        body = self.link.request(
            "ToRequest",
            {
                "entitlement": ent.to_dict(),
                "module_key": module_key,
                "cached_version": cached.version if cached else None,
                "fingerprint": self.config.device_fingerprint,
            },
        )
        if body["to"] is not None:
            to = TransferableObject.from_dict(body["to"])
            self.transfers += 1
            self.to_bytes += len(json.dumps(body["to"]))
            if to.module_key != module_key or not to.verify():
                log.warning("store sent a TO for %s that fails its checksum", module_key)
                self.to_cache.discard(module_key)
            else:
                self.to_cache.store(to)
        return body["status"]

    def _on_push(self, msg: Message) -> None:
        if msg.kind != "Event":
            return
        conn = self._sessions.get(msg.body.get("sso_id"))
        if conn is None:
            return
        event = dict(msg.body)
        if event.get("type") == "IncomingData":
            conn._deliver(unb64(event["payload"]))
        else:
            conn._fire(event.get("type"), event)

    def _find_to(self, module_id: str) -> TransferableObject:
        discarded = self.to_cache.discarded
        for key in sorted(self.entitlements):
            to = self.to_cache.load(key)
            if to is not None and module_id in to.module_ids:
                return to
        if self.to_cache.discarded > discarded:
            raise ValidationFailed("a cached TO failed its checksum and was discarded")
        raise UnknownParameterization(f"no cached module offers {module_id!r}")

    # -- public surface ------------------------------------------------------
    def connect(self, protocol: str, ip: str, port: int, module_id: str | None = None) -> "Connection":
        if module_id is not None:
            try:
                return self._module_connect(protocol, ip, port, module_id)
            except Exception as exc:
                reason = type(exc).__name__
                self.fallbacks.append(reason)
                log.info("module connect %s failed (%s); using a legacy socket", module_id, reason)
        return self._legacy_connect(protocol, ip, port)

    def _module_connect(self, protocol, ip, port, module_id) -> "ModuleSocket":
        if self.link is None:
            raise StoreUnreachable("runtime is degraded")
        to = self._find_to(module_id)
        behavior = bh.device_behavior(to.behavior_id, to.params)
        behavior.on_connect(protocol, ip, port)
        body = self.link.request(
            "OpenSession",
            {
                "entitlement": self.entitlements[to.module_key].to_dict(),
                "module_key": to.module_key,
                "module_id": module_id,
                "dst": {"protocol": protocol, "ip": ip, "port": port},
                "src": self.config.attach_node or self.ip,
                "fingerprint": self.config.device_fingerprint,
            },
        )
        conn = ModuleSocket(self, (protocol, ip, port), body["sso_id"], behavior, to.module_key)
        with self._lock:
            self._sessions[conn.session] = conn
            self.connections.append(conn)
        return conn

    def _legacy_connect(self, protocol, ip, port) -> "LegacySocket":
        conn = LegacySocket(self, (protocol, ip, port))
        conn._out = self.peers.attach(ip, port, conn._deliver, protocol)
        with self._lock:
            self.connections.append(conn)
        return conn

    def bind_listen(self, port: int, module_id: str | None = None) -> "Listener":
        kind = "LegacySocket"
        session = None
        if module_id is not None:
            try:
                to = self._find_to(module_id)
                if self.link is None:
                    raise StoreUnreachable("runtime is degraded")
                bh.device_behavior(to.behavior_id, to.params).on_connect("tcp", self.ip, port)
                kind = "ModuleSocket"
                session = to.module_key
            except Exception as exc:
                self.fallbacks.append(type(exc).__name__)
        listener = Listener(self, port, kind, session)
        self.peers.bind(self.ip, port, listener)
        return listener

    def shutdown(self) -> int:
        """Close every open connection; returns the CloseSession frames sent."""
        sent = 0
        for conn in list(self.connections):
            if conn.state != "open":
                continue
            if isinstance(conn, ModuleSocket):
                sent += conn._close_session()
            conn._mark_closed()
        self.connections.clear()
        self._sessions.clear()
        if self.link is not None:
            self.link.close()
            self.link = None
        return sent


class Connection:
    """Common surface of both socket kinds."""

    kind = "Connection"

    def __init__(self, runtime: DsoRuntime, peer: tuple[str, str, int]):
        self.runtime = runtime
        self.peer = peer
        self.state = "open"
        self.session: str | None = None
        self._inbox: queue.Queue = queue.Queue()
        self._handlers: dict[str, list[Callable[[Any], None]]] = {k: [] for k in EVENT_KINDS}
        self._lock = threading.RLock()

    def __repr__(self) -> str:
        return f"<{self.kind} {self.peer} {self.state}>"

    def _check_open(self) -> None:
        if self.state != "open":
            raise ConnectionClosed(f"{self.kind} to {self.peer[1]}:{self.peer[2]} is closed")

    def _deliver(self, payload: bytes) -> None:
        self._inbox.put(payload)
        self._fire("IncomingData", payload)

    def _fire(self, event_type: str, event: Any) -> None:
        handlers = self._handlers.get(event_type, ())
        if not handlers:
            return
        with self.runtime.dispatch_lock:
            for h in list(handlers):
                try:
                    h(event)
                except Exception:
                    log.exception("%s handler failed", event_type)

    def on_event(self, event_type: str, handler: Callable[[Any], None]) -> None:
        if event_type not in EVENT_KINDS:
            raise InvalidArgument(f"unknown event type {event_type!r}")
        self._handlers[event_type].append(handler)

    def recv(self, timeout_ms: int | None = None) -> bytes:
        if timeout_ms is None:
            timeout_ms = self.runtime.config.recv_timeout_ms
        try:
            return self._inbox.get(block=timeout_ms > 0, timeout=timeout_ms / 1000 if timeout_ms > 0 else None)
        except queue.Empty:
            if self.state != "open":
                raise ConnectionClosed("connection closed") from None
            raise RecvTimeout(f"nothing received within {timeout_ms} ms") from None

    def _mark_closed(self) -> None:
        self.state = "closed"

    def close(self) -> None:
        with self._lock:
            self._check_open()
            self._mark_closed()


class LegacySocket(Connection):
    """Plain transport straight to the peer."""

    kind = "LegacySocket"

    _out: Callable[[bytes], None]

    def on_event(self, event_type, handler):
        if event_type == "ObjectiveViolation":
            raise Unsupported("legacy sockets carry no performance objective")
        super().on_event(event_type, handler)

    def send(self, payload: bytes) -> dict:
        with self._lock:
            self._check_open()
            if len(payload) > MAX_FRAME:
                raise FrameTooLarge(f"{len(payload)} bytes exceeds {MAX_FRAME}")
            self._out(bytes(payload))
            return {"delivered": True}


class ModuleSocket(Connection):
    """Traffic goes to the store session, which forwards it over its paths."""

    kind = "ModuleSocket"

    def __init__(self, runtime, peer, session: str, behavior: bh.DeviceBehavior, module_key: str):
        super().__init__(runtime, peer)
        self.session = session
        self.behavior = behavior
        self.module_key = module_key

    def _request(self, request: dict) -> dict:
        if isinstance(request.get("payload"), (bytes, bytearray)):
            request = {**request, "payload": b64(bytes(request["payload"]))}
        return self.runtime.link.request("Data", {"sso_id": self.session, "request": request})

    def send(self, payload: bytes) -> dict:
        with self._lock:
            self._check_open()
            if len(payload) > MAX_FRAME:
                raise FrameTooLarge(f"{len(payload)} bytes exceeds {MAX_FRAME}")
            ack: dict = {}
            for piece in self.behavior.on_send(bytes(payload)):
                ack = self._request({"op": "send", "payload": piece})
            return ack

    def report_sample(self, value: float) -> dict:
        with self._lock:
            self._check_open()
            return self.runtime.link.request("Sample", {"sso_id": self.session, "value": value})

    def _utility(self, name: str) -> None:
        if name not in self.behavior.utilities:
            raise Unsupported(f"{self.behavior.behavior_id} has no {name}")

    def undo_send(self) -> dict:
        with self._lock:
            self._check_open()
            self._utility("undo_send")
            return self._request({"op": "undo"})

    def redo_send(self) -> dict:
        with self._lock:
            self._check_open()
            self._utility("redo_send")
            return self._request({"op": "redo"})

    def send_stream(self, source: bytes | Iterable[bytes]) -> int:
        with self._lock:
            self._check_open()
            self._utility("send_stream")
            chunks = self.behavior.chunks(source)
            for chunk in chunks:
                self._request({"op": "send", "payload": chunk})
            return len(chunks)

    def _close_session(self) -> int:
        try:
            self.runtime.link.request("CloseSession", {"sso_id": self.session, "reason": "explicit"})
        except (SocketStoreError, OSError, AttributeError) as exc:
            log.info("CloseSession for %s not delivered: %s", self.session, exc)
            return 0
        return 1

    def close(self) -> None:
        with self._lock:
            self._check_open()
            self._close_session()
            self._mark_closed()
            self.runtime._sessions.pop(self.session, None)
            if self in self.runtime.connections:
                self.runtime.connections.remove(self)


class Listener:
    """Accepts simulated incoming connections on ``(runtime.ip, port)``."""

    def __init__(self, runtime: DsoRuntime, port: int, kind: str, module_key: str | None):
        self.runtime = runtime
        self.port = port
        self.kind = kind
        self.module_key = module_key
        self._accepted: queue.Queue = queue.Queue()
        self.state = "open"

    def attach(self, reply: Callable[[bytes], None], protocol: str = "tcp") -> Callable[[bytes], None]:
        if self.state != "open":
            raise ConnectFailed(f"listener on {self.port} is closed")
        peer = (protocol, "remote", self.port)
        if self.kind == "ModuleSocket":
            conn: Connection = _AcceptedModuleSocket(self.runtime, peer, reply, self.module_key)
        else:
            conn = LegacySocket(self.runtime, peer)
            conn._out = reply
        self._accepted.put(conn)
        return conn._deliver

    def accept(self, timeout_ms: int = 0) -> Connection:
        try:
            return self._accepted.get(block=timeout_ms > 0, timeout=timeout_ms / 1000 if timeout_ms > 0 else None)
        except queue.Empty:
            raise RecvTimeout("no pending connection") from None

    def close(self) -> None:
        if self.state == "open":
            self.state = "closed"
            self.runtime.peers.unbind(self.runtime.ip, self.port)


class _AcceptedModuleSocket(ModuleSocket):
    """Inbound side of a module listener: same kind, replies go straight back."""

    def __init__(self, runtime, peer, reply, module_key):
        Connection.__init__(self, runtime, peer)
        self.behavior = bh.DeviceBehavior({})
        self.module_key = module_key
        self._out = reply

    def send(self, payload: bytes) -> dict:
        with self._lock:
            self._check_open()
            if len(payload) > MAX_FRAME:
                raise FrameTooLarge(f"{len(payload)} bytes exceeds {MAX_FRAME}")
            self._out(bytes(payload))
            return {"delivered": True}

    def close(self) -> None:
        with self._lock:
            self._check_open()
            self._mark_closed()


# -- functional surface -------------------------------------------------------------
def init_runtime(
    config: DeviceConfig | dict,
    connector: Callable[[str], Any] | None = None,
    peers: PeerTable | None = None,
    cache: ToCache | None = None,
) -> DsoRuntime:
    """Attach to the first reachable store and refresh every entitled TO.

    ``connector`` maps an endpoint string to a link; the default opens TCP.
    With no reachable endpoint the runtime is returned degraded.
    """
    if isinstance(config, dict):
        config = DeviceConfig.from_dict(config)
    if connector is None:
        from .service import connect_endpoint

        connector = connect_endpoint
    rt = DsoRuntime(config, connector, peers, cache)
    rt._attach()
    if rt.link is not None:
        for key in sorted(rt.entitlements):
            try:
                rt.refresh(key)
            except SocketStoreError as exc:
                log.warning("TO refresh for %s failed: %s", key, exc)
    return rt


def connect(runtime: DsoRuntime, protocol: str, ip: str, port: int, module_id: str | None = None) -> Connection:
    return runtime.connect(protocol, ip, port, module_id)


def send(conn: Connection, payload: bytes) -> dict:
    return conn.send(payload)


def recv(conn: Connection, timeout_ms: int | None = None) -> bytes:
    return conn.recv(timeout_ms)


def close(conn: Connection) -> None:
    conn.close()


def bind_listen(runtime: DsoRuntime, port: int, module_id: str | None = None) -> Listener:
    return runtime.bind_listen(port, module_id)


def on_event(conn: Connection, event_type: str, handler: Callable[[Any], None]) -> None:
    conn.on_event(event_type, handler)


def shutdown(runtime: DsoRuntime) -> int:
    return runtime.shutdown()
