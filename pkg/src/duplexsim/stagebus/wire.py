"""Wire protocol: newline-delimited JSON messages and pinned generators.

Framing: one UTF-8 JSON object per line, fields in canonical order
(type, session, seq, payload), compact separators, terminated by a single
newline.  Canonical bytes make golden-byte tests and cross-implementation
byte comparisons possible.

The deterministic content generators are part of the protocol: any stage
implementation, in any language, must produce identical token ids for
identical (seed, session, turn, index) inputs.  The pinned 64-bit hash is
FNV-1a followed by a splitmix64 finalizer; all constants are spelled out
below and in PROTOCOL.md.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from ..core import EncodingError

PROTOCOL_VERSION = 1

MESSAGE_TYPES = (
    "hello",
    "configure",
    "text_batch",
    "speech_batch",
    "marker",
    "predict_request",
    "predict_response",
    "ack",
    "error",
)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def mix64(h: int) -> int:
    """splitmix64 finalizer; spreads FNV's weak low bits before modulo."""
    h &= _MASK64
    h ^= h >> 30
    h = (h * 0xBF58476D1CE4E5B9) & _MASK64
    h ^= h >> 27
    h = (h * 0x94D049BB133111EB) & _MASK64
    h ^= h >> 31
    return h


def stage_hash(domain: str, seed: int, session: str, major: int, minor: int) -> int:
    """The pinned content hash: h(domain|seed|session|major|minor)."""
    text = f"{domain}|{seed}|{session}|{major}|{minor}"
    return mix64(fnv1a64(text.encode("utf-8")))


def hash_unit_float(h: int) -> float:
    """Map a 64-bit hash to [0, 1) using the top 53 bits, exactly."""
    return (h >> 11) * 2.0**-53


def speech_token_ids(
    seed: int, session: str, turn: int, start: int, count: int, codebook_size: int
) -> list[int]:
    return [
        stage_hash("speech", seed, session, turn, start + i) % codebook_size
        for i in range(count)
    ]


def text_token_ids(
    seed: int, session: str, turn: int, start: int, count: int, vocab_size: int
) -> list[int]:
    return [
        stage_hash("text", seed, session, turn, start + i) % vocab_size
        for i in range(count)
    ]


def feature_floats(seed: int, session: str, chunk: int, width: int) -> list[float]:
    return [
        hash_unit_float(stage_hash("feat", seed, session, chunk, j)) for j in range(width)
    ]


# ---------------------------------------------------------------------------
# Message codec

@dataclass(frozen=True)
class WireMessage:
    type: str
    session: str
    seq: int
    payload: dict

    def __post_init__(self) -> None:
        if self.type not in MESSAGE_TYPES:
            raise EncodingError(f"unknown message type {self.type!r}")
        if not isinstance(self.payload, dict):
            raise EncodingError(f"payload must be an object, got {type(self.payload)}")
        if not isinstance(self.seq, int) or isinstance(self.seq, bool) or self.seq < 0:
            raise EncodingError(f"seq must be a non-negative int, got {self.seq!r}")


def encode_message(msg: WireMessage) -> bytes:
    obj = {
        "type": msg.type,
        "session": msg.session,
        "seq": msg.seq,
        "payload": msg.payload,
    }
    try:
        line = json.dumps(obj, separators=(",", ":"), allow_nan=False)
    except (TypeError, ValueError) as exc:
        raise EncodingError(f"unserializable payload: {exc}") from exc
    return line.encode("utf-8") + b"\n"


def decode_message(line: bytes | str) -> WireMessage:
    if isinstance(line, bytes):
        line = line.decode("utf-8", errors="strict")
    try:
        obj = json.loads(line)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise EncodingError(f"malformed message line: {exc}") from exc
    if not isinstance(obj, dict):
        raise EncodingError("message line must hold a JSON object")
    mtype = obj.get("type")
    if mtype not in MESSAGE_TYPES:
        raise EncodingError(f"unknown message type {mtype!r}")
    for key in ("session", "seq", "payload"):
        if key not in obj:
            raise EncodingError(f"message missing field {key!r}")
    if not isinstance(obj["session"], str):
        raise EncodingError("session must be a string")
    if not isinstance(obj["seq"], int) or isinstance(obj["seq"], bool):
        raise EncodingError("seq must be an integer")
    if not isinstance(obj["payload"], dict):
        raise EncodingError("payload must be an object")
    return WireMessage(
        type=mtype, session=obj["session"], seq=obj["seq"], payload=obj["payload"]
    )
