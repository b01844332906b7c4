"""Peer identities: key-hash ids, signed identity records, rotation, petnames.

A PeerId is the base32 SHA-256 of the peer's *original* Ed25519 public key.
Rotations replace the record's current key but keep the id; the record
carries the chain of rotation links so anyone can walk from the original key
to the current one.
"""

from __future__ import annotations

import base64
import hashlib
import os
import re
import struct
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Mapping

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from folkfed.errors import FolkError, IntegrityError, NotFound, UsageError

PEER_ID_RE = re.compile(r"[a-z2-7]{52}\Z")
HANDLE_RE = re.compile(r"[^:@.\s]{1,64}\Z")
ALIAS_RE = re.compile(r"[A-Za-z0-9_-]{1,64}\Z")
SIGNATURE_LENGTH = 64
_RECORD_MAGIC = b"FID1"


def peer_id_from_key(public_key: bytes) -> str:
    digest = hashlib.sha256(public_key).digest()
    return base64.b32encode(digest).decode("ascii").rstrip("=").lower()


def peer_id_bytes(peer_id: str) -> bytes:
    """The 32 raw hash bytes behind a PeerId (wire format sender field)."""
    if not PEER_ID_RE.match(peer_id):
        raise ValueError(f"not a PeerId: {peer_id!r}")
    return base64.b32decode(peer_id.upper() + "====")


def peer_id_from_bytes(raw: bytes) -> str:
    if len(raw) != 32:
        raise ValueError("PeerId bytes must be 32 long")
    return base64.b32encode(raw).decode("ascii").rstrip("=").lower()


def is_peer_id(text: str) -> bool:
    return bool(PEER_ID_RE.match(text))


class SecretHandle:
    """Opaque signing capability.  Deliberately not serializable."""

    __slots__ = ("_key",)

    def __init__(self, key: Ed25519PrivateKey):
        self._key = key

    @property
    def public_key(self) -> bytes:
        return self._key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)

    def _sign(self, message: bytes) -> bytes:
        return self._key.sign(message)

    def __reduce__(self):
        raise TypeError("SecretHandle cannot be serialized")

    def __repr__(self) -> str:
        return "SecretHandle(<hidden>)"


def secret_from_seed(seed: bytes) -> SecretHandle:
    material = hashlib.sha256(b"folkfed-identity\x00" + seed).digest()
    return SecretHandle(Ed25519PrivateKey.from_private_bytes(material))


@dataclass(frozen=True)
class RotationLink:
    old_public_key: bytes
    new_public_key: bytes
    generation: int
    proof: bytes


@dataclass(frozen=True)
class IdentityRecord:
    peer_id: str
    public_key: bytes
    display_handle: str
    recovery_locator: str | None
    generation: int
    signature: bytes
    chain: tuple[RotationLink, ...] = field(default=())

    @property
    def keys(self) -> tuple[bytes, ...]:
        """Every key this identity has used, oldest first."""
        if not self.chain:
            return (self.public_key,)
        return (self.chain[0].old_public_key,) + tuple(link.new_public_key for link in self.chain)


# ---------------------------------------------------------------------------
# canonical encoding


def _put(buf: bytearray, data: bytes) -> None:
    buf += struct.pack(">I", len(data))
    buf += data


def _record_body(record: IdentityRecord) -> bytes:
    buf = bytearray(_RECORD_MAGIC)
    _put(buf, record.peer_id.encode("utf-8"))
    _put(buf, record.public_key)
    _put(buf, record.display_handle.encode("utf-8"))
    if record.recovery_locator is None:
        buf += b"\x00"
    else:
        buf += b"\x01"
        _put(buf, record.recovery_locator.encode("utf-8"))
    buf += struct.pack(">Q", record.generation)
    buf += struct.pack(">I", len(record.chain))
    for link in record.chain:
        _put(buf, link.old_public_key)
        _put(buf, link.new_public_key)
        buf += struct.pack(">Q", link.generation)
        _put(buf, link.proof)
    return bytes(buf)


def encode_record(record: IdentityRecord) -> bytes:
    """Binary `.fid` encoding: length-prefixed fields, signature last."""
    buf = bytearray(_record_body(record))
    _put(buf, record.signature)
    return bytes(buf)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise ValueError("truncated record")
        out = self.data[self.pos: self.pos + n]
        self.pos += n
        return out

    def field(self) -> bytes:
        (n,) = struct.unpack(">I", self.take(4))
        return self.take(n)

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def done(self) -> None:
        if self.pos != len(self.data):
            raise ValueError("trailing bytes after record")


def decode_record(data: bytes) -> IdentityRecord:
    r = _Reader(data)
    if r.take(4) != _RECORD_MAGIC:
        raise ValueError("not an identity record")
    peer_id = r.field().decode("utf-8")
    public_key = r.field()
    handle = r.field().decode("utf-8")
    flag = r.take(1)
    if flag == b"\x00":
        locator = None
    elif flag == b"\x01":
        locator = r.field().decode("utf-8")
    else:
        raise ValueError("bad locator flag")
    generation = r.u64()
    count = r.u32()
    if count > 10_000:
        raise ValueError("implausible rotation chain")
    chain = []
    for _ in range(count):
        old, new = r.field(), r.field()
        gen = r.u64()
        chain.append(RotationLink(old, new, gen, r.field()))
    signature = r.field()
    r.done()
    return IdentityRecord(peer_id, public_key, handle, locator, generation, signature, tuple(chain))


# ---------------------------------------------------------------------------
# operations


def _check_handle(handle: str) -> None:
    if not HANDLE_RE.match(handle):
        raise UsageError(f"display handle must be 1-64 chars without ':', '@', '.', whitespace: {handle!r}")


def generate_identity(
    entropy: bytes | None = None,
    handle: str = "peer",
    recovery_locator: str | None = None,
) -> tuple[IdentityRecord, SecretHandle]:
    """Create a fresh keypair and its generation-0 identity record.

    With ``entropy`` the keypair is a deterministic function of it (used by
    the simulator and test vectors); otherwise the OS entropy source is used.
    """
    _check_handle(handle)
    if entropy is None:
        try:
            entropy = os.urandom(32)
        except NotImplementedError as exc:
            raise FolkError("no entropy source available") from exc
    secret = secret_from_seed(entropy)
    public_key = secret.public_key
    unsigned = IdentityRecord(
        peer_id=peer_id_from_key(public_key),
        public_key=public_key,
        display_handle=handle,
        recovery_locator=recovery_locator,
        generation=0,
        signature=b"",
    )
    return replace(unsigned, signature=secret._sign(_record_body(unsigned))), secret


def _verify_raw(public_key: bytes, message: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (InvalidSignature, ValueError, TypeError):
        return False
    return True


def rotation_message(peer_id: str, generation: int, new_public_key: bytes) -> bytes:
    return b"folkfed-rotate\x00" + peer_id.encode("ascii") + struct.pack(">Q", generation) + new_public_key


def verify_identity(record: IdentityRecord) -> bool:
    """True iff the record's signature and its whole rotation chain check out."""
    try:
        if not isinstance(record, IdentityRecord) or not HANDLE_RE.match(record.display_handle):
            return False
        if record.generation != len(record.chain):
            return False
        keys = record.keys
        if peer_id_from_key(keys[0]) != record.peer_id:
            return False
        if keys[-1] != record.public_key:
            return False
        for i, link in enumerate(record.chain):
            if link.generation != i + 1 or link.old_public_key != keys[i]:
                return False
            message = rotation_message(record.peer_id, link.generation, link.new_public_key)
            if not _verify_raw(link.old_public_key, message, link.proof):
                return False
        return _verify_raw(record.public_key, _record_body(record), record.signature)
    except Exception:
        return False


def sign(secret: SecretHandle, message: bytes) -> bytes:
    return secret._sign(message)


def verify(record: IdentityRecord, message: bytes, signature: bytes) -> bool:
    """Check ``signature`` against the record's current key."""
    return _verify_raw(record.public_key, message, signature)


def verify_historical(record: IdentityRecord, message: bytes, signature: bytes) -> bool:
    """Check ``signature`` against any key the identity has ever held."""
    return any(_verify_raw(key, message, signature) for key in record.keys)


def rotation_proof(old_secret: SecretHandle, record: IdentityRecord, new_public_key: bytes) -> bytes:
    return old_secret._sign(rotation_message(record.peer_id, record.generation + 1, new_public_key))


def rotate_key(
    record: IdentityRecord,
    new_public_key: bytes,
    proof: bytes,
    new_secret: SecretHandle,
) -> IdentityRecord:
    """Advance ``record`` to a new key, keeping its PeerId.

    ``proof`` is the old key's signature over the rotation message (see
    :func:`rotation_proof`); ``new_secret`` re-signs the new record.
    """
    message = rotation_message(record.peer_id, record.generation + 1, new_public_key)
    if not _verify_raw(record.public_key, message, proof):
        raise IntegrityError("rotation proof does not verify under the current key")
    if new_secret.public_key != new_public_key:
        raise UsageError("new_secret does not match new_public_key")
    link = RotationLink(record.public_key, new_public_key, record.generation + 1, proof)
    unsigned = replace(
        record,
        public_key=new_public_key,
        generation=record.generation + 1,
        chain=record.chain + (link,),
        signature=b"",
    )
    return replace(unsigned, signature=new_secret._sign(_record_body(unsigned)))


# ---------------------------------------------------------------------------
# petnames


@dataclass(frozen=True)
class HandleTable:
    """Local alias -> PeerId bindings.  Immutable; bind returns a new table."""

    bindings: Mapping[str, str] = field(default_factory=lambda: MappingProxyType({}))

    def __post_init__(self):
        if not isinstance(self.bindings, MappingProxyType):
            object.__setattr__(self, "bindings", MappingProxyType(dict(self.bindings)))

    def __eq__(self, other) -> bool:
        return isinstance(other, HandleTable) and dict(self.bindings) == dict(other.bindings)

    def __hash__(self) -> int:
        return hash(tuple(sorted(self.bindings.items())))

    def __contains__(self, alias: str) -> bool:
        return alias in self.bindings

    def get(self, alias: str) -> str | None:
        return self.bindings.get(alias)


def bind_handle(table: HandleTable, alias: str, peer: str) -> HandleTable:
    if not ALIAS_RE.match(alias):
        raise UsageError(f"malformed alias {alias!r}")
    merged = dict(table.bindings)
    merged[alias] = peer
    return HandleTable(merged)


def resolve_handle(table: HandleTable, alias: str) -> str:
    try:
        return table.bindings[alias]
    except KeyError:
        raise NotFound(f"no handle bound for {alias!r}") from None
