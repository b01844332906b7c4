"""Encrypted blob sharding.

Blobs are split into plain fixed-size chunks, each sealed with AES-GCM under
a per-blob key derived from the owner's keyring.  Holders only ever see
ciphertext; the owner (or anyone the owner hands the blob key to) can
reassemble.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from folkfed.errors import IntegrityError, NotFound, UsageError
from folkfed.terms import BlobRef

DEFAULT_CHUNK = 1024 * 1024


class Keyring:
    """Owner-held secret from which per-blob keys are derived."""

    __slots__ = ("_master",)

    def __init__(self, master: bytes):
        if len(master) < 16:
            raise UsageError("keyring master secret must be at least 16 bytes")
        self._master = bytes(master)

    @property
    def key_ref(self) -> str:
        return hashlib.sha256(b"folkfed-keyring\x00" + self._master).hexdigest()[:16]

    def blob_key(self, digest: str) -> bytes:
        return hmac.new(self._master, b"blob\x00" + digest.encode("ascii"), hashlib.sha256).digest()

    def __reduce__(self):
        raise TypeError("Keyring cannot be serialized")


@dataclass(frozen=True)
class ShardChunk:
    index: int
    holder: str
    cipher_hash: str
    length: int


@dataclass(frozen=True)
class ShardSet:
    blob: BlobRef
    chunks: tuple[ShardChunk, ...]
    key_ref: str
    chunk_size: int


def _nonce(digest: str, index: int) -> bytes:
    return hashlib.sha256(f"{digest}:{index}".encode("ascii")).digest()[:12]


def _aad(digest: str, index: int, count: int) -> bytes:
    return f"folkfed-shard:{digest}:{index}:{count}".encode("ascii")


def encrypt_chunks(key: bytes, blob: BlobRef, content: bytes, chunk_size: int) -> list[bytes]:
    if chunk_size <= 0:
        raise UsageError("chunk_size must be positive")
    pieces = [content[i: i + chunk_size] for i in range(0, len(content), chunk_size)] or [b""]
    aes = AESGCM(key)
    return [aes.encrypt(_nonce(blob.hash, i), p, _aad(blob.hash, i, len(pieces))) for i, p in enumerate(pieces)]


def decrypt_chunks(key: bytes, blob: BlobRef, ciphertexts: Sequence[bytes]) -> bytes:
    aes = AESGCM(key)
    out = bytearray()
    for i, ct in enumerate(ciphertexts):
        try:
            out += aes.decrypt(_nonce(blob.hash, i), ct, _aad(blob.hash, i, len(ciphertexts)))
        except InvalidTag:
            raise IntegrityError(f"chunk {i} of {blob.hash} failed authentication") from None
    data = bytes(out)
    if len(data) != blob.length or hashlib.sha256(data).hexdigest() != blob.hash:
        raise IntegrityError(f"reassembled blob does not match {blob.hash}")
    return data


def shard_out(
    keyring: Keyring,
    blob: BlobRef,
    content: bytes,
    holders: Sequence[str],
    chunk_size: int = DEFAULT_CHUNK,
) -> tuple[ShardSet, tuple[bytes, ...]]:
    """Encrypt ``content`` into chunks assigned round-robin to ``holders``.

    Returns the shard manifest and the ciphertexts (index-aligned) that the
    caller ships to each chunk's holder.
    """
    if not holders:
        raise UsageError("shard_out needs at least one holder")
    if hashlib.sha256(content).hexdigest() != blob.hash or len(content) != blob.length:
        raise IntegrityError("content does not match the blob reference")
    cts = encrypt_chunks(keyring.blob_key(blob.hash), blob, content, chunk_size)
    chunks = tuple(
        ShardChunk(i, holders[i % len(holders)], hashlib.sha256(ct).hexdigest(), len(ct)) for i, ct in enumerate(cts)
    )
    return ShardSet(blob, chunks, keyring.key_ref, chunk_size), tuple(cts)


def reassemble(
    keyring: Keyring,
    shards: ShardSet,
    fetch: Mapping[int, bytes] | Callable[[ShardChunk], bytes | None],
) -> bytes:
    """Fetch every chunk, check it against the manifest, decrypt and join."""
    if keyring.key_ref != shards.key_ref:
        raise IntegrityError("keyring does not hold this shard set's key")
    cts = []
    for chunk in shards.chunks:
        ct = fetch.get(chunk.index) if isinstance(fetch, Mapping) else fetch(chunk)
        if ct is None:
            raise NotFound(f"chunk {chunk.index} is missing from {chunk.holder}")
        if len(ct) != chunk.length or hashlib.sha256(ct).hexdigest() != chunk.cipher_hash:
            raise IntegrityError(f"chunk {chunk.index} does not match the shard manifest")
        cts.append(ct)
    return decrypt_chunks(keyring.blob_key(shards.blob.hash), shards.blob, cts)
