"""Versioned quad storage: signed commit chains, blobs, fork and merge."""

from __future__ import annotations

from folkfed.linkstore.canonical import (
    CommitRecord,
    commit_id,
    decode_commit,
    decode_quads,
    encode_commit,
    encode_quads,
    quads_hash,
)
from folkfed.linkstore.store import (
    ConflictKey,
    MergeConflict,
    ObjectRecord,
    Side,
    Store,
    announced_version,
    read_log,
    version_quad,
)

__all__ = [
    "CommitRecord",
    "ConflictKey",
    "MergeConflict",
    "ObjectRecord",
    "Side",
    "Store",
    "announced_version",
    "commit_id",
    "decode_commit",
    "decode_quads",
    "encode_commit",
    "encode_quads",
    "quads_hash",
    "read_log",
    "version_quad",
]
