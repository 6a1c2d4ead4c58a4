"""Exception hierarchy shared by every service.

Each error carries a stable ``code`` string so it can cross the wire inside an
``Error`` message and be re-raised as the same class on the other side.
"""

from __future__ import annotations


class SocketStoreError(Exception):
    code = "SocketStoreError"

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.details = details

    def to_body(self) -> dict:
        return {"code": self.code, "message": self.message, "details": self.details}


# domain-core
class InvalidArgument(SocketStoreError):
    code = "InvalidArgument"


# wire-protocol
class FrameTooLarge(SocketStoreError):
    code = "FrameTooLarge"


class ProtocolError(SocketStoreError):
    code = "ProtocolError"


class NeedMoreBytes(SocketStoreError):
    """The buffer holds only part of a frame."""

    code = "NeedMoreBytes"


# registry
class EponymityViolation(SocketStoreError):
    code = "EponymityViolation"


class ValidationFailed(SocketStoreError):
    code = "ValidationFailed"


class Disposed(SocketStoreError):
    code = "Disposed"


class IllegalTransition(SocketStoreError):
    code = "IllegalTransition"


class InvalidRating(SocketStoreError):
    code = "InvalidRating"


class NotRateable(SocketStoreError):
    code = "NotRateable"


class NotPurchasable(SocketStoreError):
    code = "NotPurchasable"


class Unauthorized(SocketStoreError):
    code = "Unauthorized"


class NotFound(SocketStoreError):
    code = "NotFound"


class DisposalRefused(SocketStoreError):
    code = "DisposalRefused"

    def __init__(self, reason: str, message: str = "", **details):
        super().__init__(message or f"disposal refused: {reason}", reason=reason, **details)
        self.reason = reason


class CompositionRefused(SocketStoreError):
    code = "CompositionRefused"


# network control
class TopologyError(SocketStoreError):
    code = "TopologyError"


class NoRoute(SocketStoreError):
    code = "NoRoute"


class AlreadyReleased(SocketStoreError):
    code = "AlreadyReleased"


class StalePath(SocketStoreError):
    code = "StalePath"


# store proxy
class UnknownParameterization(SocketStoreError):
    code = "UnknownParameterization"


class AllocationFailed(SocketStoreError):
    code = "AllocationFailed"


class InvalidSession(SocketStoreError):
    code = "InvalidSession"


class DelegationRefused(SocketStoreError):
    code = "DelegationRefused"


# device sdk
class StoreUnreachable(SocketStoreError):
    code = "StoreUnreachable"


class ConnectFailed(SocketStoreError):
    code = "ConnectFailed"


class ConnectionClosed(SocketStoreError):
    code = "ConnectionClosed"


class BindFailed(SocketStoreError):
    code = "BindFailed"


class Unsupported(SocketStoreError):
    code = "Unsupported"


class RecvTimeout(SocketStoreError):
    code = "RecvTimeout"


class BehaviorError(SocketStoreError):
    code = "BehaviorError"


# example modules
class NothingToUndo(SocketStoreError):
    code = "NothingToUndo"


class NothingToRedo(SocketStoreError):
    code = "NothingToRedo"


# scenario harness
class ScenarioError(SocketStoreError):
    code = "ScenarioError"

    def __init__(self, step: int | None, message: str):
        prefix = f"step {step}: " if step is not None else ""
        super().__init__(prefix + message, step=step)
        self.step = step


def _collect(cls: type, out: dict[str, type]) -> dict[str, type]:
    for sub in cls.__subclasses__():
        out[sub.code] = sub
        _collect(sub, out)
    return out


def error_from_body(body: dict) -> SocketStoreError:
    """Rebuild an exception from an ``Error`` message body."""
    classes = _collect(SocketStoreError, {"SocketStoreError": SocketStoreError})
    cls = classes.get(body.get("code"), SocketStoreError)
    details = dict(body.get("details") or {})
    message = body.get("message", "")
    if cls is DisposalRefused:
        reason = details.pop("reason", "unknown")
        return DisposalRefused(reason, message, **details)
    if cls is ScenarioError:
        return ScenarioError(details.get("step"), message)
    return cls(message, **details)
