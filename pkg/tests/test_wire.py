import json
import struct

import pytest
from hypothesis import given, settings, strategies as st

from socketstore.errors import FrameTooLarge, NeedMoreBytes, ProtocolError
from socketstore.wire import KINDS, MAX_FRAME, FrameDecoder, Message, decode_frame, encode_frame, encode_raw

json_values = st.recursive(
    st.none() | st.booleans() | st.integers(-(2**53), 2**53) | st.text(max_size=20),
    lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(max_size=8), inner, max_size=4),
    max_leaves=12,
)
messages = st.builds(
    Message,
    st.sampled_from(KINDS),
    st.integers(0, 2**40),
    st.dictionaries(st.text(max_size=8), json_values, max_size=5),
)


def test_length_prefix_matches_payload():
    data = encode_frame(Message("Error", 0, {"code": "X"}))
    (n,) = struct.unpack(">I", data[:4])
    assert n == len(data) - 4


@pytest.mark.parametrize("kind", KINDS)
def test_every_kind_round_trips_with_empty_body(kind):
    msg = Message(kind, 1, {})
    assert decode_frame(encode_frame(msg)) == (msg, b"")


def test_oversize_payload_rejected():
    with pytest.raises(FrameTooLarge):
        encode_raw(b"x" * (MAX_FRAME + 1))
    # a peer declaring more than the bound is speaking a broken protocol
    with pytest.raises(ProtocolError):
        decode_frame(struct.pack(">I", MAX_FRAME + 1))


def test_two_frames_in_one_buffer():
    a, b = Message("Hello", 1, {"protocol": 1}), Message("Data", 2, {"x": [1, 2]})
    first, rest = decode_frame(encode_frame(a) + encode_frame(b))
    assert first == a and rest == encode_frame(b)


def test_short_buffers_need_more_bytes():
    with pytest.raises(NeedMoreBytes):
        decode_frame(b"\x00\x00\x00")
    with pytest.raises(NeedMoreBytes):
        decode_frame(encode_frame(Message("Hello", 1, {}))[:-1])


@pytest.mark.parametrize(
    "payload",
    [
        b"not json",
        b"[]",
        b'{"kind":"Hello","correlation_id":1}',
        b'{"kind":"Nope","correlation_id":1,"body":{}}',
        b'{"kind":"Hello","correlation_id":true,"body":{}}',
        b'{"kind":"Hello","correlation_id":1.5,"body":{}}',
        b'{"kind":"Hello","correlation_id":1,"body":[]}',
        b'{"kind":"Hello","correlation_id":1,"body":{},"x":0}',
        b"\xff\xfe",
        pytest.param(b'{"kind":"Hello","correlation_id":' + b"9" * 5000 + b',"body":{}}', id="huge-int"),
        pytest.param(b"[" * 50_000, id="deep-nesting"),
    ],
)
def test_malformed_payloads_are_protocol_errors(payload):
    with pytest.raises(ProtocolError):
        decode_frame(encode_raw(payload))


@given(st.lists(messages, max_size=6), st.data())
@settings(max_examples=150)
def test_any_chunking_decodes_the_same_sequence(msgs, data):
    stream = b"".join(encode_frame(m) for m in msgs)
    cuts = sorted(data.draw(st.lists(st.integers(0, len(stream)), max_size=8)))
    dec, out, prev = FrameDecoder(), [], 0
    for c in cuts + [len(stream)]:
        out.extend(dec.feed(stream[prev:c]))
        prev = c
    assert out == msgs
    assert dec.pending == 0


@given(messages)
def test_codec_round_trip(msg):
    assert decode_frame(encode_frame(msg)) == (msg, b"")


@given(st.binary(max_size=64))
def test_random_bytes_never_crash(blob):
    try:
        decode_frame(blob)
    except (ProtocolError, NeedMoreBytes, FrameTooLarge):
        pass


def test_error_reply_carries_code():
    msg = Message("Data", 9, {}).error(ProtocolError("bad"))
    assert msg.kind == "Error" and msg.correlation_id == 9 and msg.body["code"] == "ProtocolError"
    assert json.loads(encode_frame(msg)[4:])["body"]["message"] == "bad"
