"""Wire endpoints for the services and the links that reach them.

``StoreService`` answers devices (Hello, ToRequest, OpenSession, Data,
CloseSession, Sample) and operator RPCs; ``NetworkService`` answers
Subscribe and the allocation RPCs of Network Control. Both have a single
``handle(message, push)`` entry point, so the same object serves an
in-process ``LoopbackLink`` and a real TCP connection.
"""

from __future__ import annotations

import base64
import itertools
import logging
import queue
import socket
import socketserver
import threading
from collections import Counter
from typing import Any, Callable

from .core import Entitlement, ModuleDescriptor, Rating
from .errors import (
    InvalidArgument,
    NotFound,
    ProtocolError,
    SocketStoreError,
    StoreUnreachable,
    Unsupported,
    error_from_body,
)
from .netsim import NetworkEvent, Path
from .registry import ObjectiveStats
from .wire import (
    PROTOCOL_VERSION,
    RESPONSE_KIND,
    FrameDecoder,
    Message,
    decode_frame,
    encode_frame,
)

log = logging.getLogger(__name__)

Push = Callable[[Message], None]


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def unb64(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"), validate=True)


def _decode_request(request: dict) -> dict:
    out = dict(request)
    if isinstance(out.get("payload"), str):
        try:
            out["payload"] = unb64(out["payload"])
        except ValueError:
            raise ProtocolError("payload is not base64") from None
    return out


def _jsonable(value: Any) -> Any:
    if isinstance(value, (bytes, bytearray)):
        return b64(bytes(value))
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "to_dict"):
        return value.to_dict()
    if isinstance(value, float) and value == float("inf"):
        return None
    return value


class _Dispatcher:
    """Common request loop: route by kind, turn errors into Error replies."""

    def handle(self, msg: Message, push: Push | None = None) -> Message:
        if msg.kind not in RESPONSE_KIND:
            return msg.error(ProtocolError(f"{msg.kind} is not a request kind"))
        try:
            handler = getattr(self, f"on_{msg.kind}", None)
            if handler is None:
                raise ProtocolError(f"{type(self).__name__} does not serve {msg.kind}")
            return msg.reply(handler(msg.body, push))
        except SocketStoreError as exc:
            return msg.error(exc)
        except AttributeError as exc:
            return msg.error(Unsupported(f"{self.service_name} endpoint cannot serve this: {exc}"))
        except (KeyError, TypeError, ValueError) as exc:
            return msg.error(ProtocolError(f"bad {msg.kind} body: {exc!r}"))

    def on_Hello(self, body: dict, push) -> dict:
        if body.get("protocol", PROTOCOL_VERSION) != PROTOCOL_VERSION:
            raise ProtocolError(f"protocol {body.get('protocol')} not supported")
        return {"protocol": PROTOCOL_VERSION, "service": self.service_name}

    def on_Data(self, body: dict, push) -> dict:
        if "rpc" in body:
            fn = self.rpcs().get(body["rpc"])
            if fn is None:
                raise ProtocolError(f"unknown rpc {body['rpc']!r}")
            return {"result": _jsonable(fn(**body.get("args", {})))}
        return self.on_session_data(body, push)

    def on_session_data(self, body: dict, push) -> dict:
        raise ProtocolError("no session data on this service")

    def rpcs(self) -> dict[str, Callable]:
        return {}


class StoreService(_Dispatcher):
    """Device- and operator-facing endpoint of the Store (registry + proxy)."""

    service_name = "store"

    def __init__(self, registry, proxy=None):
        self.registry = registry
        self.proxy = proxy

    def on_ToRequest(self, body, push):
        ent = Entitlement.from_dict(body["entitlement"])
        resp = self.registry.fetch_to(ent, body["module_key"], body.get("cached_version"), body.get("fingerprint"))
        return resp.to_dict()

    def _need_proxy(self):
        if self.proxy is None:
            raise ProtocolError("this endpoint hosts no store proxy")
        return self.proxy

    def on_OpenSession(self, body, push):
        proxy = self._need_proxy()
        ent = Entitlement.from_dict(body["entitlement"])
        holder: dict = {}

        def sink(event: dict) -> None:
            if push is not None:
                push(Message("Event", 0, {"sso_id": holder.get("id"), **_jsonable(event)}))

        opened = proxy.open_session(
            ent,
            body["module_key"],
            body["module_id"],
            body["dst"],
            src=body.get("src"),
            fingerprint=body.get("fingerprint"),
            sink=sink,
        )
        holder["id"] = opened.sso_id
        return {"sso_id": opened.sso_id, "reused": opened.reused}

    def on_session_data(self, body, push):
        reply = self._need_proxy().data(body["sso_id"], _decode_request(body["request"]))
        return _jsonable(reply)

    def on_CloseSession(self, body, push):
        outcome = self._need_proxy().close_session(body["sso_id"], body.get("reason", "explicit"))
        return {"sso_id": body["sso_id"], "outcome": outcome}

    def on_Sample(self, body, push):
        return self._need_proxy().record_sample(body["sso_id"], body["value"]).to_dict()

    # operator RPCs, one per registry operation
    def rpcs(self):
        r = self.registry
        return {
            "publish": lambda desc, submitter, now=None: r.publish_module(ModuleDescriptor.from_dict(desc), submitter, now),
            "review": lambda key, verdict: r.review_module(key, verdict),
            "rate": lambda key, rating: r.rate_module(key, Rating.from_dict(rating)),
            "rank": lambda query=None: [list(row) for row in r.rank_modules(query)],
            "browse": lambda query=None: [
                {**d.to_dict(), "score": r.score(d.module_key)} for d in r.browse(query)
            ],
            "purchase": lambda app_id, key, device_fingerprint=None, now=None: r.purchase(app_id, key, device_fingerprint, now),
            "deprecate": lambda key, now=None: r.transition_lifecycle(key, "deprecated", now),
            "dispose": lambda key, now=None: r.transition_lifecycle(key, "disposed", now),
            "compose": lambda parts, fields, now=None: r.compose_modules(parts, fields, now),
            "descriptor": lambda key: r.descriptor(key),
            "verify": lambda entitlement, fingerprint=None: r.verify(Entitlement.from_dict(entitlement), fingerprint),
            "record_sample": lambda key, attained: r.record_sample(key, attained),
            "stats": lambda key: r.stats(key),
        }


class NetworkService(_Dispatcher):
    """Wire endpoint of Network Control: Subscribe/Event plus allocation RPCs."""

    service_name = "netsim"

    def __init__(self, network):
        self.network = network

    def on_Subscribe(self, body, push):
        if push is None:
            raise ProtocolError("Subscribe needs a duplex connection")

        def forward(ev: NetworkEvent) -> None:
            push(Message("Event", 0, ev.to_dict()))

        sid = self.network.subscribe(forward, body.get("event_types") or _all_types(), body.get("links"))
        return {"sub_id": sid}

    def rpcs(self):
        n = self.network
        return {
            "allocate_path": lambda src, dst, constraints=None, owner="": n.allocate_path(src, dst, constraints, owner),
            "reserve_path": lambda nodes, owner="": n.reserve_path(nodes, owner),
            "release_path": lambda path_id: n.release_path(path_id),
            "path_metrics": lambda path: list(n.path_metrics(Path.from_dict(path))),
            "path_is_up": lambda path: n.path_is_up(Path.from_dict(path)),
            "best_path": lambda src, dst, constraints=None: list(n.best_path(src, dst, constraints)),
            "disjoint_pair": lambda src, dst: list(n.disjoint_pair(src, dst)),
            "resolve": lambda address: n.resolve(address),
            "set_link_state": lambda link_id, change: n.set_link_state(link_id, change),
            "allocation_count": lambda: n.allocation_count(),
            "unsubscribe": lambda sub_id: n.unsubscribe(sub_id),
        }


def _all_types():
    from .netsim import EVENT_TYPES

    return EVENT_TYPES


# -- links ---------------------------------------------------------------------
class _LinkBase:
    def __init__(self) -> None:
        self._cids = itertools.count(1)
        self._push_handlers: list[Callable[[Message], None]] = []
        self.bytes_sent = 0
        self.bytes_received = 0
        self.sent_kinds: Counter[str] = Counter()

    def on_push(self, handler: Callable[[Message], None]) -> None:
        self._push_handlers.append(handler)

    def _dispatch_push(self, msg: Message) -> None:
        for h in list(self._push_handlers):
            try:
                h(msg)
            except Exception:
                log.exception("push handler failed")

    @staticmethod
    def _check(request: Message, resp: Message) -> dict:
        if resp.correlation_id != request.correlation_id:
            raise ProtocolError("correlation id mismatch")
        if resp.kind == "Error":
            raise error_from_body(resp.body)
        if resp.kind != RESPONSE_KIND[request.kind]:
            raise ProtocolError(f"{request.kind} answered with {resp.kind}")
        return resp.body

    def rpc(self, name: str, **args) -> Any:
        return self.request("Data", {"rpc": name, "args": _jsonable(args)})["result"]


class LoopbackLink(_LinkBase):
    """In-process link that still pushes every message through the frame codec.

    ``directory``/``name`` let a scenario take the endpoint down: requests on a
    down endpoint raise ``StoreUnreachable``.
    """

    def __init__(self, service, directory=None, name: str | None = None):
        super().__init__()
        self._service = service
        self._directory = directory
        self._name = name
        self.closed = False

    def _reachable(self) -> None:
        if self.closed or (self._directory is not None and not self._directory.is_up(self._name)):
            raise StoreUnreachable(f"endpoint {self._name} unreachable")

    def request(self, kind: str, body: dict) -> dict:
        self._reachable()
        msg = Message(kind, next(self._cids), body)
        data = encode_frame(msg)
        self.bytes_sent += len(data)
        self.sent_kinds[kind] += 1
        (server_side,) = FrameDecoder().feed(data)
        resp = self._service.handle(server_side, self._server_push)
        out = encode_frame(resp)
        self.bytes_received += len(out)
        return self._check(msg, decode_frame(out)[0])

    def _server_push(self, msg: Message) -> None:
        if self.closed:
            return
        data = encode_frame(msg)
        self.bytes_received += len(data)
        self._dispatch_push(decode_frame(data)[0])

    def close(self) -> None:
        self.closed = True


class TcpLink(_LinkBase):
    """Framed request/response over one TCP connection, with a reader thread
    routing replies by correlation id and everything else to push handlers."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        super().__init__()
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise StoreUnreachable(f"{host}:{port}: {exc}") from None
        self._sock.settimeout(None)
        self._timeout = timeout
        self._wlock = threading.Lock()
        self._pending: dict[int, list] = {}
        self._plock = threading.Lock()
        self.closed = False
        # pushes run on their own thread so a handler may issue requests on this link
        self._pushes: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        threading.Thread(target=self._push_loop, daemon=True).start()

    def _push_loop(self) -> None:
        while True:
            msg = self._pushes.get()
            if msg is None:
                return
            self._dispatch_push(msg)

    def _read_loop(self) -> None:
        dec = FrameDecoder()
        try:
            while True:
                chunk = self._sock.recv(65536)
                if not chunk:
                    break
                for msg in dec.feed(chunk):
                    self.bytes_received += len(encode_frame(msg))
                    with self._plock:
                        slot = self._pending.pop(msg.correlation_id, None) if msg.kind != "Event" else None
                    if slot is not None:
                        slot[1] = msg
                        slot[0].set()
                    else:
                        self._pushes.put(msg)
        except (OSError, ProtocolError):
            pass
        finally:
            self.closed = True
            self._pushes.put(None)
            with self._plock:
                for slot in self._pending.values():
                    slot[0].set()
                self._pending.clear()

    def request(self, kind: str, body: dict) -> dict:
        if self.closed:
            raise StoreUnreachable("connection closed")
        msg = Message(kind, next(self._cids), body)
        data = encode_frame(msg)
        slot = [threading.Event(), None]
        with self._plock:
            self._pending[msg.correlation_id] = slot
        with self._wlock:
            try:
                self._sock.sendall(data)
            except OSError as exc:
                raise StoreUnreachable(str(exc)) from None
        self.bytes_sent += len(data)
        self.sent_kinds[kind] += 1
        if not slot[0].wait(self._timeout) or slot[1] is None:
            raise StoreUnreachable(f"no reply to {kind}")
        return self._check(msg, slot[1])

    def close(self) -> None:
        self.closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def connect_endpoint(endpoint: str) -> TcpLink:
    """Open a link to ``tcp://host:port`` or ``host:port``."""
    addr = endpoint.removeprefix("tcp://")
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise InvalidArgument(f"bad endpoint {endpoint!r}")
    return TcpLink(host, int(port))


# -- remote clients --------------------------------------------------------------
class RemoteRegistry:
    """The slice of the Registry surface the proxy needs, over a link."""

    def __init__(self, link):
        self.link = link

    def verify(self, ent: Entitlement, presented_fingerprint: str | None = None) -> bool:
        return self.link.rpc("verify", entitlement=ent.to_dict(), fingerprint=presented_fingerprint)

    def descriptor(self, key: str) -> ModuleDescriptor:
        return ModuleDescriptor.from_dict(self.link.rpc("descriptor", key=key))

    def record_sample(self, key: str, attained: bool) -> ObjectiveStats:
        return ObjectiveStats(**self.link.rpc("record_sample", key=key, attained=attained))

    def fetch_to(self, ent, key, cached_version=None, presented_fingerprint=None):
        from .registry import ToResponse

        body = self.link.request(
            "ToRequest",
            {"entitlement": ent.to_dict(), "module_key": key, "cached_version": cached_version, "fingerprint": presented_fingerprint},
        )
        return ToResponse.from_dict(body)


class RemoteNetwork:
    """Network Control surface used by the proxy, over a link.

    ``subscribe`` opens a Subscribe stream; events arrive as pushed frames.
    """

    def __init__(self, link):
        self.link = link
        self._callbacks: dict[int, Callable[[NetworkEvent], None]] = {}
        link.on_push(self._on_push)

    def _on_push(self, msg: Message) -> None:
        if msg.kind == "Event" and "event_type" in msg.body:
            ev = NetworkEvent.from_dict(msg.body)
            for cb in list(self._callbacks.values()):
                cb(ev)

    def subscribe(self, callback, event_types=None, links=None) -> int:
        body = self.link.request("Subscribe", {"event_types": list(event_types or _all_types()), "links": links})
        self._callbacks[body["sub_id"]] = callback
        return body["sub_id"]

    def unsubscribe(self, sub_id: int) -> None:
        self._callbacks.pop(sub_id, None)
        self.link.rpc("unsubscribe", sub_id=sub_id)

    def allocate_path(self, src, dst, constraints=None, owner=""):
        return Path.from_dict(self.link.rpc("allocate_path", src=src, dst=dst, constraints=constraints, owner=owner))

    def reserve_path(self, nodes, owner=""):
        return Path.from_dict(self.link.rpc("reserve_path", nodes=list(nodes), owner=owner))

    def release_path(self, path_id):
        self.link.rpc("release_path", path_id=path_id)

    def path_metrics(self, path):
        latency, bandwidth = self.link.rpc("path_metrics", path=path.to_dict())
        return latency, float("inf") if bandwidth is None else bandwidth

    def path_is_up(self, path):
        return self.link.rpc("path_is_up", path=path.to_dict())

    def best_path(self, src, dst, constraints=None):
        nodes, links, latency = self.link.rpc("best_path", src=src, dst=dst, constraints=constraints)
        return tuple(nodes), tuple(links), latency

    def disjoint_pair(self, src, dst):
        a, b = self.link.rpc("disjoint_pair", src=src, dst=dst)
        return tuple(a), tuple(b)

    def resolve(self, address):
        return self.link.rpc("resolve", address=address)

    def set_link_state(self, link_id, change):
        ev = self.link.rpc("set_link_state", link_id=link_id, change=change)
        return NetworkEvent.from_dict(ev) if ev else None

    def allocation_count(self):
        return self.link.rpc("allocation_count")


# -- TCP server ------------------------------------------------------------------
class _Handler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        service = self.server.service
        wlock = threading.Lock()
        sock = self.request

        def push(msg: Message) -> None:
            data = encode_frame(msg)
            with wlock:
                try:
                    sock.sendall(data)
                except OSError:
                    pass

        dec = FrameDecoder()
        while True:
            try:
                chunk = sock.recv(65536)
            except OSError:
                return
            if not chunk:
                return
            try:
                msgs = dec.feed(chunk)
            except ProtocolError as exc:
                push(Message("Error", 0, exc.to_body()))
                return
            for msg in msgs:
                push(service.handle(msg, push))


class FrameServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], service):
        self.service = service
        super().__init__(address, _Handler)

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"tcp://{host}:{port}"


def serve_in_thread(service, host: str = "127.0.0.1", port: int = 0) -> FrameServer:
    server = FrameServer((host, port), service)
    threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True).start()
    return server
