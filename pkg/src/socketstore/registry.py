"""Module registry: publication workflow, ratings and ranking, purchases,
transferable-object distribution, lifecycle and composition.

State changes go through a single lock and, when a log path is configured,
are appended to a JSON-lines log that is replayed on startup.
"""

from __future__ import annotations

import json
import logging
import math
import os
import threading
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Iterable

from .core import (
    Entitlement,
    Lifecycle,
    ModuleDescriptor,
    PerformanceObjective,
    Rating,
    SsoBehaviorRef,
    TransferableObject,
    canonical_json,
    issue_entitlement,
    validate_descriptor,
    verify_entitlement,
)
from .errors import (
    CompositionRefused,
    DisposalRefused,
    Disposed,
    EponymityViolation,
    IllegalTransition,
    InvalidArgument,
    InvalidRating,
    NotFound,
    NotPurchasable,
    NotRateable,
    Unauthorized,
    ValidationFailed,
)

log = logging.getLogger(__name__)

DAY_MS = 24 * 3600 * 1000


@dataclass(frozen=True)
class RegistryConfig:
    secret: str = "socket-store-secret"
    weight_stars: float = 0.5
    weight_attainment: float = 0.3
    weight_popularity: float = 0.2
    disposal_attainment_below: float = 0.5
    disposal_min_samples: int = 20
    maintenance_grace_ms: int = 90 * DAY_MS

    @classmethod
    def from_dict(cls, d: dict) -> "RegistryConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True)
class ObjectiveStats:
    samples: int = 0
    attained: int = 0
    last_maintainer_update: int = 0

    @property
    def ratio(self) -> float:
        return self.attained / self.samples if self.samples else 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ToResponse:
    status: str  # "up_to_date" | "new" | "default"
    to: TransferableObject | None = None

    def to_dict(self) -> dict:
        return {"status": self.status, "to": self.to.to_dict() if self.to else None}

    @classmethod
    def from_dict(cls, d: dict) -> "ToResponse":
        return cls(d["status"], TransferableObject.from_dict(d["to"]) if d.get("to") else None)


def rank_score(mean_stars: float, attainment_ratio: float, purchase_count: int, cfg: RegistryConfig = RegistryConfig()) -> float:
    popularity = min(1.0, math.log10(1 + purchase_count) / 3)
    return (
        cfg.weight_stars * (mean_stars / 5)
        + cfg.weight_attainment * attainment_ratio
        + cfg.weight_popularity * popularity
    )


_SERVED = (Lifecycle.PUBLISHED, Lifecycle.DEPRECATED)


class Registry:
    def __init__(
        self,
        config: RegistryConfig | None = None,
        log_path: str | os.PathLike | None = None,
        clock: Callable[[], int] | None = None,
        manifest: dict | None = None,
        trace: Callable[[dict], None] | None = None,
    ):
        self.config = config or RegistryConfig()
        self.modules: dict[str, ModuleDescriptor] = {}
        self.pending: dict[str, ModuleDescriptor] = {}
        self.entitlements: list[Entitlement] = []
        self.attainment: dict[str, ObjectiveStats] = {}
        self.manifest = manifest
        self._clock = clock or (lambda: 0)
        self._lock = threading.RLock()
        self._trace = trace
        self._log_path = os.fspath(log_path) if log_path else None
        self._replaying = False
        if self._log_path and os.path.exists(self._log_path):
            self.replay(self._log_path)

    # -- persistence ----------------------------------------------------
    def _append(self, op: str, **args) -> None:
        if self._trace is not None:
            self._trace({"svc": "registry", "op": op, **_jsonable(args)})
        if self._replaying or not self._log_path:
            return
        with open(self._log_path, "ab") as fh:
            fh.write(canonical_json({"op": op, "args": _jsonable(args)}) + b"\n")

    def replay(self, path: str | os.PathLike) -> None:
        self._replaying = True
        try:
            with open(path, "rb") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        _REPLAY[rec["op"]](self, rec["args"])
        finally:
            self._replaying = False

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "config": asdict(self.config),
                "modules": {k: d.to_dict() for k, d in sorted(self.modules.items())},
                "pending": {k: d.to_dict() for k, d in sorted(self.pending.items())},
                "entitlements": [e.to_dict() for e in self.entitlements],
                "attainment": {k: s.to_dict() for k, s in sorted(self.attainment.items())},
            }

    def dumps(self) -> bytes:
        return canonical_json(self.snapshot())

    @classmethod
    def loads(cls, data: bytes | str, **kwargs) -> "Registry":
        snap = json.loads(data)
        reg = cls(RegistryConfig.from_dict(snap.get("config", {})), **kwargs)
        reg.modules = {k: ModuleDescriptor.from_dict(d) for k, d in snap["modules"].items()}
        reg.pending = {k: ModuleDescriptor.from_dict(d) for k, d in snap.get("pending", {}).items()}
        reg.entitlements = [Entitlement.from_dict(e) for e in snap["entitlements"]]
        reg.attainment = {k: ObjectiveStats(**s) for k, s in snap["attainment"].items()}
        return reg

    # -- helpers ----------------------------------------------------------
    def _now(self, now: int | None) -> int:
        return self._clock() if now is None else now

    def _get(self, key: str) -> ModuleDescriptor:
        try:
            return self.modules[key]
        except KeyError:
            raise NotFound(f"unknown module {key!r}") from None

    def descriptor(self, key: str) -> ModuleDescriptor:
        with self._lock:
            return self._get(key)

    def lifecycle(self, key: str) -> Lifecycle:
        """Lifecycle of the working copy (a pending revision if there is one)."""
        with self._lock:
            if key in self.pending:
                return self.pending[key].lifecycle
            return self._get(key).lifecycle

    def _taken_module_ids(self, except_key: str) -> set[str]:
        taken = set()
        for table in (self.modules, self.pending):
            for k, d in table.items():
                if k != except_key:
                    taken.update(d.parameterizations)
        return taken

    def stats(self, key: str) -> ObjectiveStats:
        with self._lock:
            return self.attainment.get(key, ObjectiveStats())

    # -- publication ----------------------------------------------------
    def publish_module(self, desc: ModuleDescriptor, submitter: str | None, now: int | None = None) -> ModuleDescriptor:
        with self._lock:
            now = self._now(now)
            if not submitter or submitter != desc.contributor:
                raise EponymityViolation("submissions must be signed by their contributor")
            result = validate_descriptor(desc, self._taken_module_ids(desc.module_key), self.manifest)
            if not result.ok:
                raise ValidationFailed("; ".join(result.violations), violations=list(result.violations))
            key = desc.module_key
            current = self.modules.get(key)
            if current is not None and current.lifecycle is Lifecycle.DISPOSED:
                raise Disposed(f"module {key} is disposed")
            working = self.pending.get(key, current)
            if working is not None and working.lifecycle not in (
                Lifecycle.REVISION_REQUESTED,
                Lifecycle.PUBLISHED,
                Lifecycle.DEPRECATED,
            ):
                raise IllegalTransition(f"cannot resubmit {key} while {working.lifecycle.value}")
            version = desc.version
            for prior in (current, self.pending.get(key)):
                if prior is not None:
                    version = max(version, prior.version + 1)
            stored = replace(
                desc,
                version=version,
                lifecycle=Lifecycle.UNDER_REVIEW,
                ratings=current.ratings if current else (),
                purchase_count=current.purchase_count if current else 0,
            )
            if current is not None and current.lifecycle is Lifecycle.PUBLISHED:
                self.pending[key] = stored
            else:
                self.pending.pop(key, None)
                self.modules[key] = stored
            stats = self.attainment.get(key, ObjectiveStats())
            self.attainment[key] = replace(stats, last_maintainer_update=now)
            self._append("publish_module", desc=desc.to_dict(), submitter=submitter, now=now)
            return stored

    def review_module(self, key: str, verdict: str) -> ModuleDescriptor:
        if verdict not in ("accept", "request_revision"):
            raise InvalidArgument(f"unknown verdict {verdict!r}")
        with self._lock:
            in_pending = key in self.pending
            target = self.pending[key] if in_pending else self._get(key)
            if target.lifecycle is not Lifecycle.UNDER_REVIEW:
                raise IllegalTransition(f"{key} is {target.lifecycle.value}, not under_review")
            if verdict == "accept":
                reviewed = replace(target, lifecycle=Lifecycle.PUBLISHED)
                if in_pending:
                    served = self.modules[key]
                    reviewed = replace(reviewed, ratings=served.ratings, purchase_count=served.purchase_count)
                self.pending.pop(key, None)
                self.modules[key] = reviewed
            else:
                reviewed = replace(target, lifecycle=Lifecycle.REVISION_REQUESTED)
                if in_pending:
                    self.pending[key] = reviewed
                else:
                    self.modules[key] = reviewed
            self._append("review_module", key=key, verdict=verdict)
            return reviewed

    def rate_module(self, key: str, rating: Rating) -> ModuleDescriptor:
        with self._lock:
            if not isinstance(rating.stars, int) or not 1 <= rating.stars <= 5:
                raise InvalidRating(f"stars must be an integer in [1,5], got {rating.stars!r}")
            desc = self._get(key)
            if desc.lifecycle is not Lifecycle.PUBLISHED:
                raise NotRateable(f"{key} is {desc.lifecycle.value}")
            desc = replace(desc, ratings=desc.ratings + (rating,))
            self.modules[key] = desc
            self._append("rate_module", key=key, rating=rating.to_dict())
            return desc

    # -- discovery ------------------------------------------------------
    def score(self, key: str) -> float:
        with self._lock:
            desc = self._get(key)
            return rank_score(desc.mean_stars(), self.stats(key).ratio, desc.purchase_count, self.config)

    def rank_modules(self, query: str | None = None) -> list[tuple[str, float]]:
        with self._lock:
            rows = []
            for key, desc in self.modules.items():
                if desc.lifecycle is not Lifecycle.PUBLISHED:
                    continue
                if query and query.lower() not in key.lower() and query.lower() not in desc.name.lower():
                    continue
                rows.append((key, self.score(key)))
        rows.sort(key=lambda r: (-r[1], r[0]))
        return rows

    def browse(self, query: str | None = None) -> list[ModuleDescriptor]:
        with self._lock:
            return [self.modules[k] for k, _ in self.rank_modules(query)]

    # -- access -----------------------------------------------------------
    def purchase(
        self, app_id: str, key: str, device_fingerprint: str | None = None, now: int | None = None
    ) -> Entitlement:
        with self._lock:
            now = self._now(now)
            desc = self.modules.get(key)
            if desc is None or desc.lifecycle is not Lifecycle.PUBLISHED:
                state = desc.lifecycle.value if desc else "unknown"
                raise NotPurchasable(f"{key} is {state}")
            ent = issue_entitlement(app_id, key, device_fingerprint, self.config.secret, now)
            self.modules[key] = replace(desc, purchase_count=desc.purchase_count + 1)
            self.entitlements.append(ent)
            self._append("purchase", app_id=app_id, key=key, device_fingerprint=device_fingerprint, now=now)
            return ent

    def verify(self, ent: Entitlement, presented_fingerprint: str | None = None) -> bool:
        with self._lock:
            return ent.module_key in self.modules and verify_entitlement(
                ent, self.config.secret, presented_fingerprint
            )

    def issue_to(self, desc: ModuleDescriptor) -> TransferableObject:
        if desc.device_behavior is None:
            behavior_id, params = "default", {}
        else:
            behavior_id, params = desc.device_behavior.behavior_id, desc.device_behavior.params
        return TransferableObject(
            module_key=desc.module_key,
            version=desc.version,
            behavior_id=behavior_id,
            params=params,
            module_ids=tuple(sorted(desc.parameterizations)),
        ).sealed()

    def fetch_to(
        self,
        ent: Entitlement,
        key: str,
        cached_version: int | None = None,
        presented_fingerprint: str | None = None,
    ) -> ToResponse:
        with self._lock:
            desc = self.modules.get(key)
            if desc is None or desc.lifecycle not in _SERVED:
                raise NotFound(f"module {key!r} is not being served")
            if ent.module_key != key or not self.verify(ent, presented_fingerprint):
                raise Unauthorized(f"entitlement does not grant {key}")
            if cached_version == desc.version:
                return ToResponse("up_to_date")
            status = "new" if desc.device_behavior is not None else "default"
            return ToResponse(status, self.issue_to(desc))

    # -- lifecycle ------------------------------------------------------
    def disposal_check(self, key: str, now: int) -> str | None:
        """Name of the first unmet disposal predicate, or None if disposal is allowed."""
        desc = self._get(key)
        if desc.lifecycle is not Lifecycle.DEPRECATED:
            return "not_deprecated"
        stats = self.stats(key)
        if stats.ratio >= self.config.disposal_attainment_below:
            return "efficient"
        if stats.samples < self.config.disposal_min_samples:
            return "insufficient_samples"
        if now - stats.last_maintainer_update <= self.config.maintenance_grace_ms:
            return "maintained"
        return None

    def transition_lifecycle(self, key: str, target: str | Lifecycle, now: int | None = None) -> ModuleDescriptor:
        target = Lifecycle(target)
        with self._lock:
            now = self._now(now)
            desc = self._get(key)
            if target is Lifecycle.DEPRECATED:
                if desc.lifecycle is not Lifecycle.PUBLISHED:
                    raise IllegalTransition(f"{key} is {desc.lifecycle.value}, not published")
                self.pending.pop(key, None)
            elif target is Lifecycle.DISPOSED:
                reason = self.disposal_check(key, now)
                if reason is not None:
                    raise DisposalRefused(reason)
            else:
                raise IllegalTransition(f"transition_lifecycle cannot target {target.value}")
            desc = replace(desc, lifecycle=target)
            self.modules[key] = desc
            self._append("transition_lifecycle", key=key, target=target.value, now=now)
            return desc

    # -- monitoring -------------------------------------------------------
    def record_sample(self, key: str, attained: bool) -> ObjectiveStats:
        with self._lock:
            self._get(key)
            s = self.attainment.get(key, ObjectiveStats())
            s = replace(s, samples=s.samples + 1, attained=s.attained + (1 if attained else 0))
            self.attainment[key] = s
            self._append("record_sample", key=key, attained=bool(attained))
            return s

    # -- composition ------------------------------------------------------
    def compose_modules(self, parts: Iterable[str], fields: dict, now: int | None = None) -> str:
        """Register a module whose network side delegates to ``parts`` in order."""
        parts = list(parts)
        with self._lock:
            if not parts:
                raise CompositionRefused("a composition needs at least one part")
            for p in parts:
                d = self.modules.get(p)
                if d is None or d.lifecycle is not Lifecycle.PUBLISHED:
                    raise CompositionRefused(f"part {p} is not published")
            key = fields["module_key"]
            objective = fields.get("objective") or self.modules[parts[-1]].objective.to_dict()
            if isinstance(objective, PerformanceObjective):
                objective = objective.to_dict()
            dev = fields.get("device_behavior")
            desc = ModuleDescriptor.from_dict(
                {
                    "module_key": key,
                    "name": fields.get("name", key),
                    "version": fields.get("version", 1),
                    "contributor": fields["contributor"],
                    "objective": objective,
                    "device_behavior": dev,
                    "network_behavior": {"behavior_id": "composition", "params": {"parts": parts}},
                    "parameterizations": fields.get("parameterizations") or {f"{key}.default": {}},
                    "composed_of": parts,
                }
            )
            self._replaying, was = True, self._replaying
            try:
                self.publish_module(desc, fields["contributor"], now)
            finally:
                self._replaying = was
            self._append("compose_modules", parts=parts, fields=_jsonable(fields), now=self._now(now))
            return key


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    return obj


_REPLAY: dict[str, Callable[[Registry, dict], Any]] = {
    "publish_module": lambda r, a: r.publish_module(ModuleDescriptor.from_dict(a["desc"]), a["submitter"], a["now"]),
    "review_module": lambda r, a: r.review_module(a["key"], a["verdict"]),
    "rate_module": lambda r, a: r.rate_module(a["key"], Rating.from_dict(a["rating"])),
    "purchase": lambda r, a: r.purchase(a["app_id"], a["key"], a["device_fingerprint"], a["now"]),
    "transition_lifecycle": lambda r, a: r.transition_lifecycle(a["key"], a["target"], a["now"]),
    "record_sample": lambda r, a: r.record_sample(a["key"], a["attained"]),
    "compose_modules": lambda r, a: r.compose_modules(a["parts"], a["fields"], a["now"]),
}
