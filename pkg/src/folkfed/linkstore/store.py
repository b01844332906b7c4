"""Per-peer versioned quad store.

Each author owns one namespace: a chain of signed commits whose parents may
also name commits in other namespaces (fork and merge provenance).  Only the
same-namespace parent contributes to a commit's visible set; foreign parents
are references.
"""

from __future__ import annotations

import hashlib
import os
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

from folkfed import kernels
from folkfed.errors import Conflict, IntegrityError, NotFound, PermissionDenied, UsageError
from folkfed.identity import (
    HandleTable,
    IdentityRecord,
    SecretHandle,
    decode_record,
    encode_record,
    sign,
    verify_historical,
    verify_identity,
)
from folkfed.linkstore.canonical import CommitRecord, commit_id, decode_commit, encode_commit
from folkfed.terms import (
    Address,
    BlobRef,
    CommitRef,
    Literal,
    Object,
    Pattern,
    Quad,
    Version,
    VersionReq,
    match_version,
)
from folkfed.vocab import FORK_OF, MERGE_OF, VERSION


@dataclass(frozen=True)
class ObjectRecord:
    address: Address
    quads: frozenset[Quad]
    at_commit: str | None


ConflictKey = tuple[tuple[str, ...], str]


class MergeConflict(Conflict):
    def __init__(self, keys: Iterable[ConflictKey]):
        self.conflicts = tuple(sorted(keys))
        listed = ", ".join(f"{':'.join(path) or '.'} {pred}" for path, pred in self.conflicts)
        super().__init__(f"unresolved merge conflicts: {listed}")


def announced_version(obj: Object) -> Version | None:
    """A concrete version from a ``@fed:version`` object, if it is one."""
    if isinstance(obj, Literal):
        text = obj.value if obj.kind == "string" else obj.text
        if obj.kind in ("string", "version"):
            try:
                return Version.parse(str(text))
            except ValueError:
                return None
    return None


class _Namespace:
    __slots__ = ("author", "head", "chain")

    def __init__(self, author: str):
        self.author = author
        self.head: str | None = None
        self.chain: list[str] = []  # oldest first


@dataclass(frozen=True)
class Side:
    """Merge resolution value: keep side ``"a"`` or ``"b"``'s objects for the key."""

    which: str

    def __post_init__(self):
        if self.which not in ("a", "b"):
            raise UsageError("merge side must be 'a' or 'b'")


class Store:
    """Quad store for one peer; holds its own namespace and replicas of others.

    With ``root`` the store is persistent: commit logs, identity records and
    blobs live under that directory and are reloaded on construction.
    """

    def __init__(
        self,
        root: str | os.PathLike | None = None,
        identities: Iterable[IdentityRecord] = (),
        handles: HandleTable | None = None,
    ):
        self.root = Path(root) if root is not None else None
        self.handles = handles
        self._lock = threading.RLock()
        self._identities: dict[str, IdentityRecord] = {}
        self._namespaces: dict[str, _Namespace] = {}
        self._commits: dict[str, CommitRecord] = {}
        self._visible: dict[str, frozenset[Quad]] = {}
        self._blobs: dict[str, bytes] = {}
        self._rows_cache: tuple[list[tuple], list[Quad]] | None = None
        for record in identities:
            self.register_identity(record)
        if self.root is not None:
            self._load()

    # -- identities ------------------------------------------------------

    def register_identity(self, record: IdentityRecord) -> None:
        if not verify_identity(record):
            raise IntegrityError(f"identity record for {record.peer_id} does not verify")
        with self._lock:
            known = self._identities.get(record.peer_id)
            if known is not None and known.generation >= record.generation:
                return
            if known is not None and record.keys[: len(known.keys)] != known.keys:
                raise IntegrityError("rotated record does not extend the known key chain")
            self._identities[record.peer_id] = record
            self._namespaces.setdefault(record.peer_id, _Namespace(record.peer_id))
            if self.root is not None:
                path = self.root / "identities" / f"{record.peer_id}.fid"
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_bytes(encode_record(record))

    def identity(self, peer: str) -> IdentityRecord:
        try:
            return self._identities[peer]
        except KeyError:
            raise NotFound(f"unknown identity {peer}") from None

    def identities(self) -> list[IdentityRecord]:
        return [self._identities[k] for k in sorted(self._identities)]

    def identity_map(self) -> Mapping[str, IdentityRecord]:
        """Read-only live view of the known identity records."""
        return MappingProxyType(self._identities)

    # -- namespaces & commits ------------------------------------------

    def namespace_of(self, address: Address) -> str:
        peer = address.peer
        if self.handles is not None and peer in self.handles:
            peer = self.handles.get(peer)
        return peer

    def namespaces(self) -> list[str]:
        return sorted(self._namespaces)

    def knows(self, author: str) -> bool:
        return author in self._namespaces

    def head(self, author: str) -> str | None:
        ns = self._namespaces.get(author)
        return ns.head if ns else None

    def heads(self) -> dict[str, str]:
        return {a: ns.head for a, ns in sorted(self._namespaces.items()) if ns.head}

    def log(self, author: str) -> list[CommitRecord]:
        """The namespace's commits, oldest first."""
        ns = self._namespaces.get(author)
        return [] if ns is None else [self._commits[c] for c in ns.chain]

    def get_commit(self, cid: str) -> CommitRecord:
        try:
            return self._commits[cid]
        except KeyError:
            raise NotFound(f"unknown commit {cid}") from None

    def has_commit(self, cid: str) -> bool:
        return cid in self._commits

    def visible(self, author: str, at: str | None = None) -> frozenset[Quad]:
        if at is None:
            at = self.head(author)
        return frozenset() if at is None else self._visible[at]

    def visible_at(self, cid: str) -> frozenset[Quad]:
        self.get_commit(cid)
        return self._visible[cid]

    def commit(
        self,
        author: str,
        secret: SecretHandle,
        add: Iterable[Quad] = (),
        remove: Iterable[Quad] = (),
        extra_parents: Iterable[str] = (),
    ) -> CommitRecord:
        """Advance ``author``'s namespace by one signed commit."""
        add, remove = frozenset(add), frozenset(remove)
        with self._lock:
            record = self.identity(author)
            if secret.public_key != record.public_key:
                raise IntegrityError("secret does not match the author's current key")
            for q in add:
                if q.author != author:
                    raise PermissionDenied(f"cannot commit a quad authored by {q.author} into {author}'s namespace")
            ns = self._namespaces[author]
            current = self.visible(author)
            for q in remove:
                if q.author != author:
                    raise PermissionDenied(f"only {q.author} may remove their own quad")
                if q not in current:
                    raise NotFound(f"cannot remove a quad that is not present: {q}")
            parents = set(extra_parents)
            if ns.head is not None:
                parents.add(ns.head)
            parents_t = tuple(sorted(parents))
            logical_time = (self._commits[ns.head].logical_time + 1) if ns.head else 1
            cid = commit_id(parents_t, author, logical_time, add, remove)
            sig = sign(secret, bytes.fromhex(cid))
            c = CommitRecord(cid, parents_t, author, add, remove, logical_time, sig)
            self._ingest(c)
            return c

    def verify_commit(self, c: CommitRecord) -> None:
        """Check a commit received from elsewhere; raises IntegrityError."""
        if commit_id(c.parents, c.author, c.logical_time, c.added, c.removed) != c.id:
            raise IntegrityError("commit id does not match its content")
        record = self._identities.get(c.author)
        if record is None:
            raise IntegrityError(f"no identity record for author {c.author}")
        if not verify_historical(record, bytes.fromhex(c.id), c.signature):
            raise IntegrityError("commit signature does not verify")
        if any(q.author != c.author for q in c.added | c.removed):
            raise IntegrityError("commit carries quads by another author")

    def apply(self, c: CommitRecord) -> bool:
        """Ingest a replicated commit; returns False if it was already known.

        The commit must extend the namespace head exactly (replication is
        in order) and must only remove quads visible at its parent.
        """
        with self._lock:
            if c.id in self._commits:
                return False
            self.verify_commit(c)
            ns = self._namespaces.setdefault(c.author, _Namespace(c.author))
            expected_time = 1
            if ns.head is not None:
                if ns.head not in c.parents:
                    raise IntegrityError("commit does not extend the namespace head")
                expected_time = self._commits[ns.head].logical_time + 1
            if c.logical_time != expected_time:
                raise IntegrityError("logical time does not follow the parent")
            if not c.removed <= self.visible(c.author):
                raise IntegrityError("commit removes quads that are not visible at its parent")
            self._ingest(c)
            return True

    def _ingest(self, c: CommitRecord) -> None:
        ns = self._namespaces.setdefault(c.author, _Namespace(c.author))
        previous = self.visible(c.author)
        self._commits[c.id] = c
        self._visible[c.id] = (previous - c.removed) | c.added
        ns.head = c.id
        ns.chain.append(c.id)
        self._rows_cache = None
        if self.root is not None:
            path = self.root / "log" / f"{c.author}.log"
            path.parent.mkdir(parents=True, exist_ok=True)
            data = encode_commit(c)
            with open(path, "ab") as fh:
                fh.write(struct.pack(">I", len(data)) + data)

    # -- reading -----------------------------------------------------------

    def _pick_snapshot(self, author: str, address: Address) -> str | None:
        ns = self._namespaces[author]
        if not address.pins:
            return ns.head
        limit = len(ns.chain)
        chosen: str | None = ns.head
        for index, req in sorted(address.pins):
            prefix = Address(author, address.segments[: index + 1])
            found = None
            for pos in range(limit - 1, -1, -1):
                c = self._commits[ns.chain[pos]]
                if any(
                    q.predicate == VERSION
                    and q.subject.unpinned() == prefix
                    and (v := announced_version(q.object)) is not None
                    and match_version(v, req)
                    for q in c.added
                ):
                    found = pos
                    break
            if found is None:
                raise NotFound(f"no announced version of {prefix} satisfies {req}")
            limit = found + 1
            chosen = ns.chain[found]
        return chosen

    def resolve(self, address: Address) -> ObjectRecord:
        """Namespace-owned quads under ``address``, honouring version pins."""
        author = self.namespace_of(address)
        with self._lock:
            if author not in self._namespaces:
                raise NotFound(f"unknown namespace @{address.peer}")
            at = self._pick_snapshot(author, address)
            root = Address(author, address.segments)
            quads = frozenset(q for q in self.visible(author, at) if q.subject.unpinned().is_within(root))
            return ObjectRecord(root, quads, at)

    def describe(self, address: Address) -> frozenset[Quad]:
        """Every visible quad, in any namespace, about ``address`` or below it."""
        root = Address(self.namespace_of(address), address.segments)
        return frozenset(q for q in self.all_visible() if q.subject.unpinned().is_within(root))

    def history(self, address: Address) -> list[CommitRecord]:
        author = self.namespace_of(address)
        if author not in self._namespaces:
            raise NotFound(f"unknown namespace @{address.peer}")
        root = Address(author, address.segments)
        out = []
        for cid in reversed(self._namespaces[author].chain):
            c = self._commits[cid]
            if any(q.subject.unpinned().is_within(root) for q in c.added | c.removed):
                out.append(c)
        return out

    def diff(self, a: str, b: str) -> tuple[frozenset[Quad], frozenset[Quad]]:
        va, vb = self.visible_at(a), self.visible_at(b)
        return vb - va, va - vb

    def all_visible(self) -> frozenset[Quad]:
        out: set[Quad] = set()
        for author in self._namespaces:
            out |= self.visible(author)
        return frozenset(out)

    def _rows(self) -> tuple[list[tuple], list[Quad]]:
        with self._lock:
            if self._rows_cache is None:
                quads = sorted(self.all_visible(), key=Quad.sort_key)
                self._rows_cache = ([q.row() for q in quads], quads)
            return self._rows_cache

    def local_query(self, pattern: Pattern | None = None) -> frozenset[Quad]:
        """Visible quads matching every bound field of ``pattern``."""
        rows, quads = self._rows()
        if pattern is None:
            return frozenset(quads)
        author, subject, predicate, obj = pattern.key()
        tag, text = obj if obj is not None else (None, None)
        hits = kernels.filter_rows(rows, author, subject, predicate, tag, text)
        return frozenset(quads[i] for i in hits)

    # -- fork & merge ------------------------------------------------------

    def fork(self, source: Address, dest: Address, author: str, secret: SecretHandle) -> CommitRecord:
        src = self.resolve(source)
        if src.at_commit is None:
            raise NotFound(f"{source} has no commits to fork from")
        dest = Address(self.namespace_of(dest), dest.segments)
        if any(q.subject.unpinned().is_within(dest) for q in self.visible(author)):
            raise Conflict(f"{dest} is already populated")
        quads = {
            Quad(author, q.subject.unpinned().rebase(src.address, dest), q.predicate, _rebase_obj(q.object, src.address, dest))
            for q in src.quads
        }
        quads.add(Quad(author, dest, FORK_OF, CommitRef(src.at_commit, src.address)))
        return self.commit(author, secret, quads, extra_parents=[src.at_commit])

    def merge_plan(
        self,
        a: Address,
        b: Address,
        resolution: Mapping[ConflictKey, object] | None = None,
        author: str | None = None,
        dest: Address | None = None,
    ) -> frozenset[Quad]:
        """The quad set a merge would write under ``dest`` (default ``a``)."""
        ra, rb = self.resolve(a), self.resolve(b)
        dest = ra.address if dest is None else Address(self.namespace_of(dest), dest.segments)
        author = author or ra.address.peer
        sides = []
        for rec in (ra, rb):
            slots: dict[ConflictKey, set] = {}
            for q in rec.quads:
                path = q.subject.unpinned().relative_to(rec.address)
                slots.setdefault((path, str(q.predicate)), set()).add(
                    (q.predicate, _rebase_obj(q.object, rec.address, dest))
                )
            sides.append(slots)
        sa, sb = sides
        resolution = dict(resolution or {})
        conflicts = [
            k for k in sa.keys() & sb.keys() if {o for _, o in sa[k]} != {o for _, o in sb[k]}
        ]
        missing = [k for k in conflicts if k not in resolution]
        if missing:
            raise MergeConflict(missing)
        out: set[Quad] = set()
        for key in sa.keys() | sb.keys():
            entries = sa.get(key, set()) | sb.get(key, set())
            predicate = next(iter(entries))[0]
            if key in conflicts:
                chosen = resolution[key]
                if isinstance(chosen, Side):
                    objects = [o for _, o in (sa if chosen.which == "a" else sb)[key]]
                else:
                    objects = chosen if isinstance(chosen, (set, frozenset, list, tuple)) else (chosen,)
            else:
                objects = [o for _, o in entries]
            subject = dest.child(*key[0])
            for o in objects:
                out.add(Quad(author, subject, predicate, o))
        for rec in (ra, rb):
            out.add(Quad(author, dest, MERGE_OF, CommitRef(rec.at_commit, rec.address)))
        return frozenset(out)

    def merge(
        self,
        a: Address,
        b: Address,
        resolution: Mapping[ConflictKey, object] | None,
        author: str,
        secret: SecretHandle,
        dest: Address | None = None,
    ) -> CommitRecord:
        """Merge ``b`` into ``dest`` (default ``a``) as one commit by ``author``.

        Conflict keys are ``(relative subject path, predicate text)``; each
        resolution value is the object (or collection of objects) to keep,
        written in ``dest``'s frame.
        """
        result = self.merge_plan(a, b, resolution, author, dest)
        dest_addr = next(q.subject for q in result if q.predicate == MERGE_OF)
        existing = {q for q in self.visible(author) if q.subject.unpinned().is_within(dest_addr)}
        heads = {self.resolve(x).at_commit for x in (a, b)} - {None}
        return self.commit(author, secret, result - existing, existing - result, extra_parents=heads)

    # -- blobs -------------------------------------------------------------

    def blob_path(self, digest: str) -> Path:
        if self.root is None:
            raise UsageError("in-memory store has no blob directory")
        return self.root / "blobs" / digest[:2] / digest[2:4] / digest

    def put_blob(self, content: bytes, codec: str = "bin") -> BlobRef:
        digest = hashlib.sha256(content).hexdigest()
        ref = BlobRef(digest, len(content), codec)
        with self._lock:
            if self.root is None:
                self._blobs.setdefault(digest, bytes(content))
            else:
                path = self.blob_path(digest)
                if not path.exists():
                    path.parent.mkdir(parents=True, exist_ok=True)
                    tmp = path.with_suffix(".tmp")
                    tmp.write_bytes(content)
                    os.replace(tmp, path)
        return ref

    def has_blob(self, digest: str) -> bool:
        if self.root is None:
            return digest in self._blobs
        return self.blob_path(digest).exists()

    def get_blob(self, ref: BlobRef | str) -> bytes:
        digest = ref.hash if isinstance(ref, BlobRef) else ref
        if self.root is None:
            data = self._blobs.get(digest)
        else:
            path = self.blob_path(digest)
            data = path.read_bytes() if path.exists() else None
        if data is None:
            raise NotFound(f"unknown blob {digest}")
        if hashlib.sha256(data).hexdigest() != digest:
            raise IntegrityError(f"blob {digest} is corrupt")
        if isinstance(ref, BlobRef) and len(data) != ref.length:
            raise IntegrityError(f"blob {digest} has the wrong length")
        return data

    def blob_digests(self) -> list[str]:
        if self.root is None:
            return sorted(self._blobs)
        base = self.root / "blobs"
        return sorted(p.name for p in base.glob("*/*/*") if p.is_file() and not p.name.endswith(".tmp"))

    # -- persistence -------------------------------------------------------

    def _load(self) -> None:
        assert self.root is not None
        root = self.root
        self.root = None  # replay without re-appending
        try:
            for path in sorted((root / "identities").glob("*.fid")):
                self.register_identity(decode_record(path.read_bytes()))
            pending: list[CommitRecord] = []
            for path in sorted((root / "log").glob("*.log")):
                pending.extend(read_log(path.read_bytes()))
            for c in sorted(pending, key=lambda c: (c.logical_time, c.id)):
                self.apply(c)
        finally:
            self.root = root

    def export_log(self) -> bytes:
        """Every commit, length-prefixed, in a replayable order."""
        out = bytearray()
        for author in self.namespaces():
            for c in self.log(author):
                data = encode_commit(c)
                out += struct.pack(">I", len(data)) + data
        return bytes(out)

    def dump(self) -> tuple[str, bytes]:
        from folkfed.dsl import serialize

        return serialize(self.all_visible()), self.export_log()

    def import_log(self, data: bytes) -> int:
        commits = read_log(data)
        count = 0
        for c in sorted(commits, key=lambda c: (c.logical_time, c.id)):
            if self.apply(c):
                count += 1
        return count


def read_log(data: bytes) -> list[CommitRecord]:
    out = []
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise IntegrityError("truncated commit log")
        (n,) = struct.unpack(">I", data[pos: pos + 4])
        pos += 4
        if pos + n > len(data):
            raise IntegrityError("truncated commit log")
        out.append(decode_commit(data[pos: pos + n]))
        pos += n
    return out


def _rebase_obj(obj: Object, old: Address, new: Address) -> Object:
    if isinstance(obj, Address) and not obj.pins and obj.is_within(old):
        return obj.rebase(old, new)
    return obj


def version_quad(author: str, subject: Address, version: str) -> Quad:
    """The announcement quad that makes ``subject`` pinnable at ``version``."""
    return Quad(author, subject, VERSION, Literal.version(VersionReq.parse(version)))
