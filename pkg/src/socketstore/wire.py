"""Length-prefixed JSON framing for DSO/Store RPC and Store/Network Control pub-sub.

A frame is a 4-byte big-endian length followed by exactly that many bytes of
canonical JSON: ``{"kind": ..., "correlation_id": ..., "body": {...}}``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Any

from .core import canonical_json
from .errors import FrameTooLarge, NeedMoreBytes, ProtocolError, SocketStoreError

PROTOCOL_VERSION = 1
MAX_FRAME = 16 * 1024 * 1024
_HEADER = struct.Struct(">I")

KINDS = (
    "Hello",
    "ToRequest",
    "ToResponse",
    "OpenSession",
    "SessionOpened",
    "Data",
    "CloseSession",
    "SessionClosed",
    "Subscribe",
    "Event",
    "Sample",
    "Error",
)

# request kind -> response kind; Error may answer any request.
RESPONSE_KIND = {
    "Hello": "Hello",
    "ToRequest": "ToResponse",
    "OpenSession": "SessionOpened",
    "Data": "Data",
    "CloseSession": "SessionClosed",
    "Subscribe": "Subscribe",
    "Sample": "Sample",
}


@dataclass(frozen=True)
class Message:
    kind: str
    correlation_id: int = 0
    body: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "correlation_id": self.correlation_id, "body": self.body}

    def reply(self, body: dict | None = None) -> "Message":
        return Message(RESPONSE_KIND[self.kind], self.correlation_id, body or {})

    def error(self, exc: SocketStoreError) -> "Message":
        return Message("Error", self.correlation_id, exc.to_body())


def encode_frame(msg: Message) -> bytes:
    if msg.kind not in KINDS:
        raise ProtocolError(f"unknown message kind {msg.kind!r}")
    payload = canonical_json(msg.to_dict())
    if len(payload) > MAX_FRAME:
        raise FrameTooLarge(f"payload of {len(payload)} bytes exceeds {MAX_FRAME}")
    return _HEADER.pack(len(payload)) + payload


def encode_raw(payload: bytes) -> bytes:
    """Frame an arbitrary payload (used for bound and malformed-frame tests)."""
    if len(payload) > MAX_FRAME:
        raise FrameTooLarge(f"payload of {len(payload)} bytes exceeds {MAX_FRAME}")
    return _HEADER.pack(len(payload)) + payload


def _parse_payload(payload: bytes) -> Message:
    try:
        obj = json.loads(payload.decode("utf-8"))
    # ValueError also covers ints past the digit limit
    except (UnicodeDecodeError, ValueError, RecursionError) as exc:
        raise ProtocolError(f"malformed payload: {exc}") from None
    if not isinstance(obj, dict) or set(obj) != {"kind", "correlation_id", "body"}:
        raise ProtocolError("payload is not a message object")
    kind, cid, body = obj["kind"], obj["correlation_id"], obj["body"]
    if kind not in KINDS:
        raise ProtocolError(f"unknown message kind {kind!r}")
    if not isinstance(cid, int) or isinstance(cid, bool):
        raise ProtocolError("correlation_id must be an integer")
    if not isinstance(body, dict):
        raise ProtocolError("body must be an object")
    return Message(kind, cid, body)


def _decode_at(buf, offset: int) -> tuple[Message, int]:
    if len(buf) - offset < _HEADER.size:
        raise NeedMoreBytes(f"have {len(buf) - offset} of {_HEADER.size} header bytes")
    (length,) = _HEADER.unpack_from(buf, offset)
    if length > MAX_FRAME:
        raise ProtocolError(f"declared length {length} exceeds {MAX_FRAME}")
    start = offset + _HEADER.size
    end = start + length
    if len(buf) < end:
        raise NeedMoreBytes(f"have {len(buf) - start} of {length} payload bytes")
    return _parse_payload(bytes(buf[start:end])), end


def decode_frame(buf: bytes) -> tuple[Message, bytes]:
    """Decode one frame from the front of ``buf``.

    Returns the message and the unconsumed remainder; raises ``NeedMoreBytes``
    when ``buf`` holds only part of a frame.
    """
    msg, end = _decode_at(buf, 0)
    return msg, bytes(buf[end:])


class FrameDecoder:
    """Incremental decoder for one byte-stream connection."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Message]:
        self._buf += data
        out = []
        offset = 0
        try:
            while True:
                msg, offset = _decode_at(self._buf, offset)
                out.append(msg)
        except NeedMoreBytes:
            return out
        finally:
            del self._buf[:offset]

    @property
    def pending(self) -> int:
        return len(self._buf)
