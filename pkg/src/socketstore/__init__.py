"""Socket Store: a marketplace for network-logic modules and the runtime that
hosts them on both sides of the network."""

from .core import (
    Entitlement,
    Lifecycle,
    ModuleDescriptor,
    PerformanceObjective,
    Rating,
    SsoBehaviorRef,
    TransferableObject,
    issue_entitlement,
    validate_descriptor,
    verify_entitlement,
)
from .device import (
    DeviceConfig,
    DsoRuntime,
    LegacySocket,
    ModuleSocket,
    bind_listen,
    connect,
    init_runtime,
    on_event,
    shutdown,
)
from .errors import SocketStoreError
from .netsim import NetworkControl, Path, Topology, load_topology
from .proxy import PoolPolicy, StoreProxy
from .registry import Registry, RegistryConfig, rank_score
from .scenario import TraceReport, run_scenario
from .wire import FrameDecoder, Message, decode_frame, encode_frame

__all__ = [
    "DeviceConfig",
    "DsoRuntime",
    "Entitlement",
    "FrameDecoder",
    "LegacySocket",
    "Lifecycle",
    "Message",
    "ModuleDescriptor",
    "ModuleSocket",
    "NetworkControl",
    "Path",
    "PerformanceObjective",
    "PoolPolicy",
    "Rating",
    "Registry",
    "RegistryConfig",
    "SocketStoreError",
    "SsoBehaviorRef",
    "StoreProxy",
    "Topology",
    "TraceReport",
    "TransferableObject",
    "bind_listen",
    "connect",
    "decode_frame",
    "encode_frame",
    "init_runtime",
    "issue_entitlement",
    "load_topology",
    "on_event",
    "rank_score",
    "run_scenario",
    "shutdown",
    "validate_descriptor",
    "verify_entitlement",
]
