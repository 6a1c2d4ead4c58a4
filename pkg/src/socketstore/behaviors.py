"""Built-in module behaviors.

Network-side hooks are pure: ``hook(state, input, view) -> (state', actions)``.
The store proxy owns all side effects and executes the returned actions in
order. ``view`` answers read-only questions about the instance and the
network (its PathPool, path metrics, best available path).

Device-side behaviors are small classes instantiated from a transferable
object's ``behavior_id`` and ``params``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Iterable, Protocol

from .errors import BehaviorError
from .netsim import EVENT_TYPES, NetworkEvent


# -- actions --------------------------------------------------------------
@dataclass(frozen=True)
class Allocate:
    role: str
    constraints: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Reserve:
    role: str
    nodes: tuple[str, ...]


@dataclass(frozen=True)
class Release:
    role: str


@dataclass(frozen=True)
class Forward:
    payload: bytes
    role: str = "main"


@dataclass(frozen=True)
class Stash:
    key: str
    payload: bytes


@dataclass(frozen=True)
class Drop:
    key: str


@dataclass(frozen=True)
class Flush:
    key: str
    role: str = "main"


@dataclass(frozen=True)
class Sample:
    value: float


@dataclass(frozen=True)
class Delegate:
    part: str
    request: dict


@dataclass(frozen=True)
class Notify:
    event: dict


@dataclass(frozen=True)
class Reply:
    body: dict


@dataclass(frozen=True)
class Fail:
    code: str
    message: str = ""


@dataclass(frozen=True)
class Note:
    """Free-form trace record (e.g. a failover switch)."""

    info: dict


class View(Protocol):
    constants: dict
    objective: Any
    src: str
    dst: str

    def roles(self) -> list[str]: ...
    def path(self, role: str): ...
    def path_up(self, role: str) -> bool: ...
    def latency(self, role: str) -> float: ...
    def best_path(self, constraints: dict | None = None) -> tuple[tuple[str, ...], float] | None: ...
    def disjoint_pair(self) -> tuple[tuple[str, ...], tuple[str, ...]] | None: ...


def _bound(view: View) -> float:
    return view.constants.get("bound_ms", view.objective.bound)


class NetworkBehavior:
    behavior_id = "relay"
    event_types: tuple[str, ...] = EVENT_TYPES

    def on_construct(self, state: dict, view: View):
        if view.best_path() is None:
            return state, [Fail("AllocationFailed", f"no route {view.src} -> {view.dst}")]
        return state, [Allocate("main")]

    def on_path_event(self, state: dict, event: NetworkEvent, view: View):
        return state, []

    def on_data(self, state: dict, request: dict, view: View):
        if request.get("op") != "send":
            return state, [Fail("Unsupported", f"{self.behavior_id} has no op {request.get('op')!r}")]
        return state, [Forward(request["payload"], "main")]

    def on_destruct(self, state: dict, view: View):
        return state, []


class Relay(NetworkBehavior):
    """Default network side: one min-latency path, no reaction to events."""


class LatencyGuard(NetworkBehavior):
    """Keeps the session on a minimum-latency path.

    When a handled event leaves the held path down or slower than the best
    available one, the path is released and the best one allocated. No route
    at all surfaces an ObjectiveViolation to the device.
    """

    behavior_id = "latency_guard"

    def _reroute(self, state: dict, view: View, why: str):
        best = view.best_path()
        held = view.latency("main") if view.path_up("main") else math.inf
        if best is None:
            return state, [Notify({"type": "ObjectiveViolation", "reason": "NoRoute", "bound": _bound(view)})]
        nodes, latency = best
        if latency < held:
            actions: list = []
            if view.path("main") is not None:
                actions.append(Release("main"))
            actions.append(Allocate("main"))
            actions.append(Note({"reroute": list(nodes), "latency_ms": latency, "why": why}))
            if latency > _bound(view):
                actions.append(Notify({"type": "ObjectiveViolation", "reason": "BoundExceeded", "latency_ms": latency}))
            return state, actions
        return state, []

    def on_path_event(self, state, event, view):
        return self._reroute(state, view, event.event_type)

    def on_data(self, state, request, view):
        if request.get("op") != "send":
            return state, [Fail("Unsupported", f"latency_guard has no op {request.get('op')!r}")]
        actions: list = []
        if not view.path_up("main"):
            state, actions = self._reroute(state, view, "send")
            if any(isinstance(a, Notify) and a.event.get("reason") == "NoRoute" for a in actions):
                return state, actions + [Reply({"delivered": False})]
            latency = next((a.info["latency_ms"] for a in actions if isinstance(a, Note)), view.latency("main"))
        else:
            latency = view.latency("main")
        return state, actions + [Forward(request["payload"], "main"), Sample(latency)]


class MultipathFailover(NetworkBehavior):
    """Primary plus node-disjoint backup path; LinkDown on the active path switches."""

    behavior_id = "multipath_failover"
    event_types = ("LinkDown", "LinkUp")

    def on_construct(self, state, view):
        pair = view.disjoint_pair()
        if pair is None:
            return state, [Fail("AllocationFailed", f"no disjoint backup {view.src} -> {view.dst}")]
        primary, backup = pair
        state = {**state, "active": "primary"}
        return state, [Reserve("primary", primary), Reserve("backup", backup)]

    def _switch(self, state, why):
        other = "backup" if state["active"] == "primary" else "primary"
        return {**state, "active": other}, [Note({"switch": other, "why": why})]

    def on_path_event(self, state, event, view):
        active = state["active"]
        path = view.path(active)
        if event.event_type == "LinkDown" and path is not None and event.link_id in path.links:
            other = "backup" if active == "primary" else "primary"
            if view.path_up(other):
                return self._switch(state, f"LinkDown {event.link_id}")
        return state, []

    def on_data(self, state, request, view):
        if request.get("op") != "send":
            return state, [Fail("Unsupported", f"multipath_failover has no op {request.get('op')!r}")]
        actions: list = []
        active = state["active"]
        other = "backup" if active == "primary" else "primary"
        if not view.path_up(active) and view.path_up(other):
            state, actions = self._switch(state, "send on down path")
        return state, actions + [Forward(request["payload"], state["active"]), Sample(view.latency(state["active"]))]


class DtnStore(NetworkBehavior):
    """Store-and-forward: while the destination has no route, sends are parked
    in the blob store and flushed FIFO once a route returns.

    Requests: ``send``, ``undo`` (drop the newest unflushed payload) and
    ``redo`` (re-park the last undone payload; a new send clears it).
    """

    behavior_id = "dtn_store"

    def _init(self, state, view):
        return {
            "connected": False,
            "buffer": [],  # [[blob_key, payload], ...] oldest first
            "next_blob": 0,
            "redo": None,
            "losses": 0,
            "capacity": int(view.constants["capacity"]),
            **state,
        }

    def on_construct(self, state, view):
        state = self._init(state, view)
        if view.best_path() is None:
            return state, []
        return {**state, "connected": True}, [Allocate("main")]

    def _reconnect(self, state, view, why):
        best = view.best_path()
        if best is None:
            return {**state, "connected": False}, [Note({"dtn": "disconnected", "why": why})] if state["connected"] else []
        actions: list = []
        if view.path("main") is not None:
            actions.append(Release("main"))
        actions.append(Allocate("main"))
        actions.extend(Flush(key) for key, _ in state["buffer"])
        if state["buffer"]:
            actions.append(Note({"dtn": "flush", "count": len(state["buffer"])}))
        return {**state, "connected": True, "buffer": []}, actions

    def on_path_event(self, state, event, view):
        state = self._init(state, view)
        if state["connected"] and view.path_up("main"):
            return state, []
        return self._reconnect(state, view, event.event_type)

    def on_data(self, state, request, view):
        state = self._init(state, view)
        op = request.get("op")
        if op == "send":
            state = {**state, "redo": None}
            if not state["connected"] or not view.path_up("main"):
                state, actions = self._reconnect(state, view, "send")
                if not state["connected"]:
                    return self._park(state, request["payload"])
                return state, actions + [Forward(request["payload"], "main")]
            return state, [Forward(request["payload"], "main")]
        if op == "undo":
            if not state["buffer"]:
                return state, [Fail("NothingToUndo", "no unflushed payload")]
            (key, payload), rest = state["buffer"][-1], state["buffer"][:-1]
            return {**state, "buffer": rest, "redo": payload}, [Drop(key), Reply({"undone": True})]
        if op == "redo":
            if state["redo"] is None:
                return state, [Fail("NothingToRedo", "nothing undone")]
            payload = state["redo"]
            state, actions = self._park({**state, "redo": None}, payload)
            return state, actions + [Reply({"redone": True})]
        return state, [Fail("Unsupported", f"dtn_store has no op {op!r}")]

    def _park(self, state, payload):
        actions: list = []
        buffer = list(state["buffer"])
        losses = state["losses"]
        if len(buffer) >= state["capacity"]:
            oldest_key, _ = buffer.pop(0)
            actions.append(Drop(oldest_key))
            losses += 1
        key = f"b{state['next_blob']}"
        buffer.append([key, payload])
        actions.append(Stash(key, payload))
        actions.append(Reply({"buffered": True, "losses": losses}))
        return {**state, "buffer": buffer, "next_blob": state["next_blob"] + 1, "losses": losses}, actions


class Composition(NetworkBehavior):
    """Delegates every request to its parts; the first part's forwards feed the
    next part, and the last part's forwards reach the network."""

    behavior_id = "composition"

    def on_construct(self, state, view):
        return state, [Delegate(part, {"op": "open"}) for part in view.constants["parts"]]

    def on_data(self, state, request, view):
        return state, [Delegate(view.constants["parts"][0], request)]


NETWORK_BEHAVIORS: dict[str, type[NetworkBehavior]] = {
    cls.behavior_id: cls for cls in (Relay, LatencyGuard, MultipathFailover, DtnStore, Composition)
}


def network_behavior(behavior_id: str) -> NetworkBehavior:
    try:
        return NETWORK_BEHAVIORS[behavior_id]()
    except KeyError:
        raise BehaviorError(f"unknown network behavior {behavior_id!r}") from None


# -- device side ---------------------------------------------------------------
class DeviceBehavior:
    """Default device side: traffic goes to the Store unchanged."""

    behavior_id = "default"
    utilities: tuple[str, ...] = ()

    def __init__(self, params: dict):
        self.params = dict(params)

    def on_connect(self, protocol: str, ip: str, port: int) -> dict:
        return {}

    def on_send(self, payload: bytes) -> list[bytes]:
        return [payload]

    def on_event(self, event: dict) -> dict:
        return event


class DtnClient(DeviceBehavior):
    behavior_id = "dtn_client"
    utilities = ("undo_send", "redo_send")


class Streaming(DeviceBehavior):
    """Adds ``send_stream``: chunk a byte source into sends of ``chunk_size``."""

    behavior_id = "streaming"
    utilities = ("send_stream",)

    def on_connect(self, protocol, ip, port):
        size = self.params.get("chunk_size")
        if not isinstance(size, int) or size <= 0:
            raise BehaviorError(f"chunk_size must be a positive integer, got {size!r}")
        return {}

    def chunks(self, source: bytes | Iterable[bytes]) -> list[bytes]:
        data = source if isinstance(source, (bytes, bytearray)) else b"".join(source)
        size = self.params["chunk_size"]
        return [bytes(data[i:i + size]) for i in range(0, len(data), size)]


DEVICE_BEHAVIORS: dict[str, type[DeviceBehavior]] = {
    cls.behavior_id: cls for cls in (DeviceBehavior, DtnClient, Streaming)
}


def device_behavior(behavior_id: str, params: dict) -> DeviceBehavior:
    try:
        cls = DEVICE_BEHAVIORS[behavior_id]
    except KeyError:
        raise BehaviorError(f"unknown device behavior {behavior_id!r}") from None
    return cls(params)


def load_manifest() -> dict:
    """behavior_id -> {side, required, params} shipped with the package."""
    text = resources.files("socketstore").joinpath("data/behaviors.json").read_text("utf-8")
    return json.loads(text)
