"""Canonical byte encodings for quad sets and commit records.

Rows are ``author, subject, predicate, tag, object`` joined by 0x1F, one per
line, lines sorted bytewise.  A commit's preimage joins its five sections
with 0x1E; the commit id is the SHA-256 of that preimage.  Neither separator
can occur inside a field because string literals escape control characters.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable

from folkfed import kernels
from folkfed.errors import IntegrityError
from folkfed.terms import HEX64_RE, Quad

ROW_SEP = b"\x1f"
SECTION_SEP = b"\x1e"


def encode_quads(quads: Iterable[Quad]) -> bytes:
    return kernels.encode_rows([q.row() for q in quads])


def decode_quads(data: bytes) -> frozenset[Quad]:
    if not data:
        return frozenset()
    out = []
    for line in data.split(b"\n"):
        fields = line.decode("utf-8").split("\x1f")
        if len(fields) != 5:
            raise ValueError("quad row must have five fields")
        out.append(Quad.from_row(fields))
    quads = frozenset(out)
    if encode_quads(quads) != data:
        raise ValueError("quad rows are not in canonical form")
    return quads


def quads_hash(quads: Iterable[Quad]) -> str:
    return hashlib.sha256(encode_quads(quads)).hexdigest()


@dataclass(frozen=True)
class CommitRecord:
    id: str
    parents: tuple[str, ...]
    author: str
    added: frozenset[Quad]
    removed: frozenset[Quad]
    logical_time: int
    signature: bytes

    def preimage(self) -> bytes:
        return commit_preimage(self.parents, self.author, self.logical_time, self.added, self.removed)


def commit_preimage(parents, author: str, logical_time: int, added, removed) -> bytes:
    return SECTION_SEP.join(
        [
            "\n".join(sorted(parents)).encode("ascii"),
            author.encode("utf-8"),
            str(logical_time).encode("ascii"),
            encode_quads(added),
            encode_quads(removed),
        ]
    )


def commit_id(parents, author: str, logical_time: int, added, removed) -> str:
    return hashlib.sha256(commit_preimage(parents, author, logical_time, added, removed)).hexdigest()


def encode_commit(commit: CommitRecord) -> bytes:
    """Preimage plus hex signature; the id is recomputed on decode."""
    return commit.preimage() + SECTION_SEP + commit.signature.hex().encode("ascii")


def decode_commit(data: bytes) -> CommitRecord:
    parts = data.split(SECTION_SEP)
    if len(parts) != 6:
        raise IntegrityError("commit record must have six sections")
    try:
        parents = tuple(p for p in parts[0].decode("ascii").split("\n") if p)
        if any(not HEX64_RE.match(p) for p in parents) or list(parents) != sorted(set(parents)):
            raise ValueError("bad parent list")
        author = parts[1].decode("utf-8")
        if not parts[2].isdigit():
            raise ValueError("bad logical time")
        logical_time = int(parts[2])
        added = decode_quads(parts[3])
        removed = decode_quads(parts[4])
        signature = bytes.fromhex(parts[5].decode("ascii"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise IntegrityError(f"malformed commit record: {exc}") from None
    cid = commit_id(parents, author, logical_time, added, removed)
    record = CommitRecord(cid, parents, author, added, removed, logical_time, signature)
    # one byte string per commit: reject hex case changes, padded numbers and the like
    if encode_commit(record) != data:
        raise IntegrityError("commit record is not in canonical form")
    return record
