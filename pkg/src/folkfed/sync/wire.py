"""Signed envelopes and their byte framing.

Frame layout: ``u32 length`` then ``kind (1) | sender (32) | u32 body length |
body | signature (64)``.  The signature covers everything before it.  Bodies
are canonical JSON (sorted keys, no whitespace).
"""

from __future__ import annotations

import base64
import json
import struct
from dataclasses import dataclass
from typing import Mapping

from folkfed.errors import IntegrityError
from folkfed.identity import (
    SIGNATURE_LENGTH,
    IdentityRecord,
    SecretHandle,
    peer_id_bytes,
    peer_id_from_bytes,
    sign,
    verify,
)

KINDS = ("HELLO", "ADVERT", "WANT", "COMMITS", "BLOB", "ACTIVITY", "QUERY", "RESULTS", "REPORT")
_CODE = {k: i + 1 for i, k in enumerate(KINDS)}
_KIND = {v: k for k, v in _CODE.items()}
HEADER = struct.Struct(">B32sI")
MAX_FRAME = 64 * 1024 * 1024


@dataclass(frozen=True)
class Envelope:
    kind: str
    sender: str
    body: bytes
    signature: bytes = b""

    def signed_part(self) -> bytes:
        return HEADER.pack(_CODE[self.kind], peer_id_bytes(self.sender), len(self.body)) + self.body

    def json(self) -> dict:
        return json.loads(self.body.decode("utf-8"))


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def unb64(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"), validate=True)


def seal(kind: str, sender: str, secret: SecretHandle, body) -> Envelope:
    if kind not in _CODE:
        raise ValueError(f"unknown envelope kind {kind!r}")
    raw = body if isinstance(body, bytes) else canonical_json(body)
    env = Envelope(kind, sender, raw)
    return Envelope(kind, sender, raw, sign(secret, env.signed_part()))


def encode_envelope(env: Envelope) -> bytes:
    inner = env.signed_part() + env.signature
    return struct.pack(">I", len(inner)) + inner


def decode_envelope(frame: bytes) -> Envelope:
    """Parse a frame without checking the signature."""
    if len(frame) < 4:
        raise IntegrityError("short frame")
    (n,) = struct.unpack(">I", frame[:4])
    inner = frame[4:]
    if n != len(inner) or n > MAX_FRAME:
        raise IntegrityError("frame length mismatch")
    if n < HEADER.size + SIGNATURE_LENGTH:
        raise IntegrityError("frame too short")
    code, sender, body_len = HEADER.unpack(inner[: HEADER.size])
    if code not in _KIND:
        raise IntegrityError(f"unknown envelope kind code {code}")
    if HEADER.size + body_len + SIGNATURE_LENGTH != n:
        raise IntegrityError("body length mismatch")
    body = inner[HEADER.size: HEADER.size + body_len]
    signature = inner[HEADER.size + body_len:]
    return Envelope(_KIND[code], peer_id_from_bytes(sender), body, signature)


def open_envelope(frame: bytes, identities: Mapping[str, IdentityRecord]) -> Envelope:
    """Decode and authenticate a frame; raises IntegrityError on any defect.

    HELLO frames carry their own identity record, which is used when the
    sender is not yet known.
    """
    env = decode_envelope(frame)
    record = identities.get(env.sender)
    if record is None and env.kind == "HELLO":
        from folkfed.identity import decode_record, verify_identity

        try:
            record = decode_record(env.body)
        except ValueError as exc:
            raise IntegrityError(f"bad HELLO record: {exc}") from None
        if record.peer_id != env.sender or not verify_identity(record):
            raise IntegrityError("HELLO record does not match its sender")
    if record is None:
        raise IntegrityError(f"unknown sender {env.sender}")
    if not verify(record, env.signed_part(), env.signature):
        raise IntegrityError("envelope signature does not verify")
    if env.kind != "HELLO":
        try:
            json.loads(env.body.decode("utf-8"))
        except (UnicodeDecodeError, ValueError):
            raise IntegrityError("envelope body is not canonical JSON") from None
    return env


def read_frame(buf: bytearray) -> bytes | None:
    """Pop one complete frame off a stream buffer, or None if incomplete."""
    if len(buf) < 4:
        return None
    (n,) = struct.unpack(">I", bytes(buf[:4]))
    if n > MAX_FRAME:
        raise IntegrityError("frame too large")
    if len(buf) < 4 + n:
        return None
    frame = bytes(buf[: 4 + n])
    del buf[: 4 + n]
    return frame
