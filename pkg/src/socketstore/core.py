"""Domain model shared by the registry, the proxy and the device runtime.

All records are frozen dataclasses with ``to_dict``/``from_dict`` helpers; the
canonical serialization is UTF-8 JSON with sorted keys and no whitespace.
Checksums and entitlement tokens are computed over that exact byte string.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable

from .errors import InvalidArgument

ParameterSet = dict[str, Any]


def canonical_json(obj: Any) -> bytes:
    return json.dumps(
        obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class Lifecycle(str, Enum):
    SUBMITTED = "submitted"
    UNDER_REVIEW = "under_review"
    REVISION_REQUESTED = "revision_requested"
    PUBLISHED = "published"
    DEPRECATED = "deprecated"
    DISPOSED = "disposed"


# Edges of the module lifecycle machine. Disposed has none.
LIFECYCLE_EDGES: dict[Lifecycle, frozenset[Lifecycle]] = {
    Lifecycle.SUBMITTED: frozenset({Lifecycle.UNDER_REVIEW}),
    Lifecycle.UNDER_REVIEW: frozenset({Lifecycle.PUBLISHED, Lifecycle.REVISION_REQUESTED}),
    Lifecycle.REVISION_REQUESTED: frozenset({Lifecycle.UNDER_REVIEW}),
    Lifecycle.PUBLISHED: frozenset({Lifecycle.UNDER_REVIEW, Lifecycle.DEPRECATED}),
    Lifecycle.DEPRECATED: frozenset({Lifecycle.UNDER_REVIEW, Lifecycle.DISPOSED}),
    Lifecycle.DISPOSED: frozenset(),
}

METRICS = ("end_to_end_latency_ms", "loss_rate", "throughput_mbps")
DIRECTIONS = ("at_most", "at_least")


@dataclass(frozen=True)
class PerformanceObjective:
    metric: str
    bound: float
    direction: str

    def satisfied_by(self, value: float) -> bool:
        if self.direction == "at_most":
            return value <= self.bound
        return value >= self.bound

    def to_dict(self) -> dict:
        return {"metric": self.metric, "bound": self.bound, "direction": self.direction}

    @classmethod
    def from_dict(cls, d: dict) -> "PerformanceObjective":
        return cls(d["metric"], d["bound"], d["direction"])


@dataclass(frozen=True)
class TransferableObject:
    module_key: str
    version: int
    behavior_id: str
    params: ParameterSet = field(default_factory=dict)
    module_ids: tuple[str, ...] = ()
    checksum: str = ""

    def content(self) -> dict:
        return {
            "module_key": self.module_key,
            "version": self.version,
            "behavior_id": self.behavior_id,
            "params": self.params,
            "module_ids": list(self.module_ids),
        }

    def compute_checksum(self) -> str:
        return sha256_hex(canonical_json(self.content()))

    def sealed(self) -> "TransferableObject":
        return replace(self, checksum=self.compute_checksum())

    def verify(self) -> bool:
        return hmac.compare_digest(self.checksum, self.compute_checksum())

    def to_dict(self) -> dict:
        return {**self.content(), "checksum": self.checksum}

    @classmethod
    def from_dict(cls, d: dict) -> "TransferableObject":
        return cls(
            module_key=d["module_key"],
            version=d["version"],
            behavior_id=d["behavior_id"],
            params=dict(d.get("params") or {}),
            module_ids=tuple(d.get("module_ids") or ()),
            checksum=d.get("checksum", ""),
        )


@dataclass(frozen=True)
class SsoBehaviorRef:
    """Names the built-in network-side behavior a module instantiates."""

    behavior_id: str
    params: ParameterSet = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"behavior_id": self.behavior_id, "params": self.params}

    @classmethod
    def from_dict(cls, d: dict) -> "SsoBehaviorRef":
        return cls(d["behavior_id"], dict(d.get("params") or {}))


@dataclass(frozen=True)
class Rating:
    rater: str
    stars: int
    comment: str = ""
    at: int = 0

    def to_dict(self) -> dict:
        return {"rater": self.rater, "stars": self.stars, "comment": self.comment, "at": self.at}

    @classmethod
    def from_dict(cls, d: dict) -> "Rating":
        return cls(d["rater"], d["stars"], d.get("comment", ""), d.get("at", 0))


@dataclass(frozen=True)
class ModuleDescriptor:
    module_key: str
    name: str
    version: int
    contributor: str
    objective: PerformanceObjective
    device_behavior: TransferableObject | None = None
    network_behavior: SsoBehaviorRef | None = None
    parameterizations: dict[str, ParameterSet] = field(default_factory=dict)
    lifecycle: Lifecycle = Lifecycle.SUBMITTED
    ratings: tuple[Rating, ...] = ()
    purchase_count: int = 0
    composed_of: tuple[str, ...] = ()

    def mean_stars(self) -> float:
        if not self.ratings:
            return 0.0
        return sum(r.stars for r in self.ratings) / len(self.ratings)

    def to_dict(self) -> dict:
        return {
            "module_key": self.module_key,
            "name": self.name,
            "version": self.version,
            "contributor": self.contributor,
            "objective": self.objective.to_dict(),
            "device_behavior": self.device_behavior.to_dict() if self.device_behavior else None,
            "network_behavior": self.network_behavior.to_dict() if self.network_behavior else None,
            "parameterizations": self.parameterizations,
            "lifecycle": self.lifecycle.value,
            "ratings": [r.to_dict() for r in self.ratings],
            "purchase_count": self.purchase_count,
            "composed_of": list(self.composed_of),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModuleDescriptor":
        dev = d.get("device_behavior")
        net = d.get("network_behavior")
        return cls(
            module_key=d["module_key"],
            name=d.get("name", d["module_key"]),
            version=d.get("version", 1),
            contributor=d.get("contributor", ""),
            objective=PerformanceObjective.from_dict(d["objective"]),
            device_behavior=_to_from_partial(d["module_key"], d.get("version", 1), dev) if dev else None,
            network_behavior=SsoBehaviorRef.from_dict(net) if net else None,
            parameterizations={k: dict(v) for k, v in (d.get("parameterizations") or {}).items()},
            lifecycle=Lifecycle(d.get("lifecycle", "submitted")),
            ratings=tuple(Rating.from_dict(r) for r in d.get("ratings") or ()),
            purchase_count=d.get("purchase_count", 0),
            composed_of=tuple(d.get("composed_of") or ()),
        )


def _to_from_partial(module_key: str, version: int, d: dict) -> TransferableObject:
    # Manifests may give only behavior_id/params; the registry seals the rest.
    return TransferableObject(
        module_key=d.get("module_key", module_key),
        version=d.get("version", version),
        behavior_id=d["behavior_id"],
        params=dict(d.get("params") or {}),
        module_ids=tuple(d.get("module_ids") or ()),
        checksum=d.get("checksum", ""),
    )


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_descriptor(
    desc: ModuleDescriptor,
    taken_module_ids: Iterable[str] = (),
    manifest: dict | None = None,
) -> ValidationResult:
    """Check every descriptor invariant and name the ones that fail.

    ``taken_module_ids`` are module_ids already owned by *other* modules in the
    registry. ``manifest`` (behavior_id -> schema) additionally checks that the
    named behaviors exist and receive their required parameters.
    """
    v: list[str] = []
    if not isinstance(desc.version, int) or desc.version < 1:
        v.append("version ≥ 1")
    if desc.device_behavior is None and desc.network_behavior is None:
        v.append("no behavior component")
    if not desc.module_key:
        v.append("module_key non-empty")
    obj = desc.objective
    if obj.metric not in METRICS:
        v.append("objective metric")
    if obj.direction not in DIRECTIONS:
        v.append("objective direction")
    if not isinstance(obj.bound, (int, float)) or not math.isfinite(obj.bound) or obj.bound < 0:
        v.append("objective bound finite and non-negative")
    taken = set(taken_module_ids)
    if any(mid in taken for mid in desc.parameterizations):
        v.append("module_id unique registry-wide")
    if any(not (1 <= r.stars <= 5) for r in desc.ratings):
        v.append("rating stars in [1,5]")
    if not isinstance(desc.purchase_count, int) or desc.purchase_count < 0:
        v.append("purchase_count non-negative")
    if desc.lifecycle not in LIFECYCLE_EDGES:
        v.append("lifecycle state")
    if manifest is not None:
        for role, ref in (("device", desc.device_behavior), ("network", desc.network_behavior)):
            if ref is None:
                continue
            schema = manifest.get(ref.behavior_id)
            if schema is None or schema.get("side") not in (role, "both"):
                v.append(f"unknown {role} behavior")
                continue
            # network constants are behavior params overlaid by each parameterization
            overlays = list(desc.parameterizations.values()) if role == "network" else []
            for overlay in overlays or [{}]:
                missing = [p for p in schema.get("required", ()) if p not in ref.params and p not in overlay]
                if missing:
                    v.append(f"{role} behavior params missing: {','.join(missing)}")
                    break
    return ValidationResult(tuple(v))


@dataclass(frozen=True)
class Entitlement:
    app_id: str
    module_key: str
    device_fingerprint: str | None
    token: str
    issued_at: int

    def to_dict(self) -> dict:
        return {
            "app_id": self.app_id,
            "module_key": self.module_key,
            "device_fingerprint": self.device_fingerprint,
            "token": self.token,
            "issued_at": self.issued_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Entitlement":
        return cls(d["app_id"], d["module_key"], d.get("device_fingerprint"), d["token"], d.get("issued_at", 0))


def _secret_bytes(secret: str | bytes) -> bytes:
    return secret.encode("utf-8") if isinstance(secret, str) else bytes(secret)


def _tag(app_id: str, module_key: str, device_fingerprint: str | None, secret: str | bytes) -> str:
    msg = canonical_json(
        {"app_id": app_id, "module_key": module_key, "device_fingerprint": device_fingerprint}
    )
    return hmac.new(_secret_bytes(secret), msg, hashlib.sha256).hexdigest()


def issue_entitlement(
    app_id: str,
    module_key: str,
    device_fingerprint: str | None,
    secret: str | bytes,
    issued_at: int = 0,
) -> Entitlement:
    if not secret:
        raise InvalidArgument("secret must be non-empty")
    if not app_id or not module_key:
        raise InvalidArgument("app_id and module_key are required")
    token = _tag(app_id, module_key, device_fingerprint, secret)
    return Entitlement(app_id, module_key, device_fingerprint, token, issued_at)


def verify_entitlement(ent: Entitlement, secret: str | bytes, presented_fingerprint: str | None = None) -> bool:
    """True iff ``ent.token`` authenticates its triple under ``secret``.

    When the device presents a fingerprint, it replaces the one recorded in the
    entitlement, so a token bound to another device fails.
    """
    if not secret:
        return False
    fp = ent.device_fingerprint if presented_fingerprint is None else presented_fingerprint
    try:
        expected = _tag(ent.app_id, ent.module_key, fp, secret)
    except (TypeError, ValueError):
        return False
    token = ent.token.encode("utf-8", "surrogateescape") if isinstance(ent.token, str) else bytes(ent.token)
    return hmac.compare_digest(token, expected.encode("ascii"))
