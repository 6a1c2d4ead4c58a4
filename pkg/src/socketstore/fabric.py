"""In-process stand-ins for the world around the Store: remote peers reachable
at (ip, port), named store endpoints that can be taken down, and the blob
store SSOs use as "cloud" storage.
"""

from __future__ import annotations

import threading
from collections import defaultdict
from typing import Callable

from .errors import BindFailed, ConnectFailed, NotFound, StoreUnreachable

Sink = Callable[[bytes], None]


class EchoPeer:
    """Sends every payload straight back on the same channel."""

    def __init__(self) -> None:
        self.received: list[bytes] = []

    def attach(self, reply: Sink, protocol: str = "tcp") -> Sink:
        def sink(payload: bytes) -> None:
            self.received.append(payload)
            reply(payload)

        return sink


class SinkPeer:
    """Records payloads and never answers."""

    def __init__(self) -> None:
        self.received: list[bytes] = []

    def attach(self, reply: Sink, protocol: str = "tcp") -> Sink:
        return self.received.append


class PeerTable:
    """Simulated (ip, port) endpoint table shared by legacy sockets and the proxy."""

    def __init__(self) -> None:
        self._peers: dict[tuple[str, int], object] = {}
        self._lock = threading.Lock()

    def bind(self, ip: str, port: int, peer) -> None:
        with self._lock:
            if (ip, int(port)) in self._peers:
                raise BindFailed(f"{ip}:{port} already bound")
            self._peers[(ip, int(port))] = peer

    def unbind(self, ip: str, port: int) -> None:
        with self._lock:
            self._peers.pop((ip, int(port)), None)

    def get(self, ip: str, port: int):
        with self._lock:
            return self._peers.get((ip, int(port)))

    def attach(self, ip: str, port: int, reply: Sink, protocol: str = "tcp") -> Sink:
        peer = self.get(ip, port)
        if peer is None:
            raise ConnectFailed(f"nothing listening at {ip}:{port}")
        return peer.attach(reply, protocol)


class StoreDirectory:
    """Named store endpoints for in-process runs; endpoints can be marked down."""

    def __init__(self) -> None:
        self._services: dict[str, object] = {}
        self._down: set[str] = set()

    def register(self, name: str, service) -> None:
        self._services[name] = service

    def set_up(self, name: str, up: bool) -> None:
        if up:
            self._down.discard(name)
        else:
            self._down.add(name)

    def lookup(self, name: str):
        if name in self._down or name not in self._services:
            raise StoreUnreachable(f"store endpoint {name} unreachable")
        return self._services[name]

    def is_up(self, name: str) -> bool:
        return name in self._services and name not in self._down


class BlobStore:
    """put/get/list keyed by session: the cloud storage a DTN module parks data in."""

    def __init__(self) -> None:
        self._data: dict[str, dict[str, bytes]] = defaultdict(dict)
        self._lock = threading.Lock()

    def put(self, session: str, key: str, data: bytes) -> None:
        with self._lock:
            self._data[session][key] = data

    def get(self, session: str, key: str) -> bytes:
        with self._lock:
            try:
                return self._data[session][key]
            except KeyError:
                raise NotFound(f"no blob {key} for {session}") from None

    def delete(self, session: str, key: str) -> None:
        with self._lock:
            self._data[session].pop(key, None)

    def list(self, session: str) -> list[str]:
        with self._lock:
            return sorted(self._data.get(session, {}))

    def sessions(self) -> list[str]:
        """Sessions that still hold at least one blob."""
        with self._lock:
            return sorted(s for s, blobs in self._data.items() if blobs)

    def drop_session(self, session: str) -> None:
        with self._lock:
            self._data.pop(session, None)
