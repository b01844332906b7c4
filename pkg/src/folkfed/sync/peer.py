"""The peer protocol engine.

A :class:`Peer` is a pure message handler: drivers hand it frames and the
current step, and it returns the frames it wants sent.  The same engine runs
under the in-process loopback driver, the simulator and the TCP transport.

Replication is pull-based.  A pinning peer sends WANT (subscribing to
notifications); the owner answers COMMITS with every commit after the
requester's head plus a manifest of the blobs it may fetch.  After a commit
the owner sends ADVERT to each subscriber whose selector it touches; any WANT
from that subscriber acknowledges it.  Every request is retried with
exponential backoff until answered or abandoned.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from folkfed.errors import CycleError, FolkError, IntegrityError, NotFound, UsageError
from folkfed.federation import (
    Activity,
    FederationState,
    GrantLevel,
    PermissionRuleSet,
    TransferReport,
    authorize,
    handle_activity,
    record_transfer,
)
from folkfed.identity import IdentityRecord, SecretHandle, encode_record, sign, verify
from folkfed.linkstore import Store
from folkfed.linkstore.canonical import CommitRecord, decode_commit, decode_quads, encode_commit, encode_quads
from folkfed.sync.shard import DEFAULT_CHUNK, Keyring, encrypt_chunks
from folkfed.sync.wire import b64, canonical_json, encode_envelope, open_envelope, seal, unb64
from folkfed.terms import Address, BlobRef, Pattern, Quad, as_predicate, object_from_tag, parse_address
from folkfed.vocab import A, EXTENDS

log = logging.getLogger(__name__)

BASE_TIMEOUT = 12
MAX_BACKOFF = 48
MAX_ATTEMPTS = 30

Outgoing = tuple[str, bytes]


@dataclass(frozen=True)
class Selector:
    """A subtree of one namespace, optionally depth-limited."""

    root: Address
    include_blobs: bool = True
    depth: int | None = None

    def __post_init__(self):
        if self.depth is not None and self.depth < 0:
            raise UsageError("selector depth must be non-negative")

    def covers(self, subject: Address) -> bool:
        s, root = subject.unpinned(), self.root.unpinned()
        if not s.is_within(root):
            return False
        return self.depth is None or len(s.segments) - len(root.segments) <= self.depth

    def to_json(self) -> dict:
        return {"root": str(self.root), "blobs": self.include_blobs, "depth": self.depth}

    @classmethod
    def from_json(cls, obj: Mapping) -> "Selector":
        return cls(parse_address(obj["root"]), bool(obj["blobs"]), obj.get("depth"))


@dataclass(frozen=True)
class TreeAdvert:
    peer: str
    heads: Mapping[str, tuple[str, int]]
    signature: bytes = b""

    def message(self) -> bytes:
        return canonical_json({"peer": self.peer, "heads": {k: list(v) for k, v in self.heads.items()}})


@dataclass(frozen=True)
class PinRecord:
    owner: str
    target: str
    selector: Selector
    since: int = 0


@dataclass
class QueryState:
    qid: str
    pattern: Pattern
    targets: frozenset[str]
    results: dict[str, frozenset[Quad]] = field(default_factory=dict)
    abandoned: set[str] = field(default_factory=set)

    @property
    def done(self) -> bool:
        return set(self.results) | self.abandoned >= self.targets

    def quads(self) -> frozenset[Quad]:
        out: set[Quad] = set()
        for qs in self.results.values():
            out |= qs
        return frozenset(out)


@dataclass
class _Pending:
    receiver: str
    kind: str
    body: dict
    attempts: int
    due: int


def pattern_to_json(p: Pattern) -> dict:
    author, subject, predicate, obj = p.key()
    return {"author": author, "subject": subject, "predicate": predicate, "object": None if obj is None else list(obj)}


def pattern_from_json(obj: Mapping) -> Pattern:
    return Pattern(
        obj.get("author"),
        None if obj.get("subject") is None else parse_address(obj["subject"]),
        None if obj.get("predicate") is None else as_predicate(obj["predicate"]),
        None if obj.get("object") is None else object_from_tag(*obj["object"]),
    )


def _backoff(attempts: int) -> int:
    return min(BASE_TIMEOUT * 2 ** max(attempts - 1, 0), MAX_BACKOFF)


class Peer:
    """One peer's protocol state around its :class:`Store`."""

    def __init__(
        self,
        record: IdentityRecord,
        secret: SecretHandle,
        store: Store | None = None,
        rules: PermissionRuleSet | None = None,
        fed_view: Mapping[str, Iterable[str]] | None = None,
        keyring: Keyring | None = None,
        federation: FederationState | None = None,
        tracker: str | None = None,
        chunk_size: int = DEFAULT_CHUNK,
    ):
        if secret.public_key != record.public_key:
            raise UsageError("secret does not belong to this identity")
        self.record = record
        self.secret = secret
        self.store = store if store is not None else Store()
        self.store.register_identity(record)
        self.rules = rules or PermissionRuleSet()
        self.fed_view: Mapping[str, Iterable[str]] = fed_view if fed_view is not None else {}
        self.keyring = keyring or Keyring(hashlib.sha256(b"keyring" + sign(secret, b"folkfed-keyring")).digest())
        self.federation = federation
        self.tracker = tracker
        self.chunk_size = chunk_size
        self.now = 0
        self.pins: dict[str, PinRecord] = {}
        self.subscribers: dict[str, Selector] = {}
        self.held_chunks: dict[str, tuple[bytes, ...]] = {}
        self.queries: dict[str, QueryState] = {}
        self.reports: list[TransferReport] = []
        self.responses: list[dict] = []
        self.stats = {"rejected": 0, "commits_applied": 0, "blobs_fetched": 0, "chunks_held": 0, "refused": 0}
        self._pending: dict[tuple, _Pending] = {}
        self._seq = 0

    @property
    def peer_id(self) -> str:
        return self.record.peer_id

    def __repr__(self) -> str:
        return f"Peer({self.peer_id[:8]})"

    # -- plumbing ------------------------------------------------------------

    def _next(self, prefix: str) -> str:
        self._seq += 1
        return f"{prefix}{self._seq}"

    def _frame(self, kind: str, body) -> bytes:
        return encode_envelope(seal(kind, self.peer_id, self.secret, body))

    def _send(self, receiver: str, kind: str, body) -> Outgoing:
        return receiver, self._frame(kind, body)

    def _request(self, key: tuple, receiver: str, kind: str, body: dict) -> Outgoing:
        self._pending[key] = _Pending(receiver, kind, body, 1, self.now + _backoff(1))
        return self._send(receiver, kind, body)

    def has_pending(self) -> bool:
        return bool(self._pending)

    def next_timer(self) -> int | None:
        return min((p.due for p in self._pending.values()), default=None)

    def hello(self, receiver: str) -> Outgoing:
        return receiver, self._frame("HELLO", encode_record(self.record))

    def introduce(self, record: IdentityRecord) -> None:
        self.store.register_identity(record)

    # -- permissions ---------------------------------------------------------

    def types_of(self, subject: Address) -> frozenset[Address]:
        from folkfed.schema import extends_closure

        out: set[Address] = set()
        for q in self.store.visible(self.peer_id):
            if q.subject.unpinned() == subject.unpinned() and q.predicate in (A, EXTENDS) and isinstance(q.object, Address):
                try:
                    out |= extends_closure(self.store, q.object)
                except (CycleError, FolkError):
                    out.add(q.object.unpinned())
        return frozenset(out)

    def level_for(self, requester: str, subject: Address) -> GrantLevel:
        if requester == self.peer_id:
            return GrantLevel.FULL
        feds = self.fed_view.get(requester, ())
        return authorize(self.rules, requester, feds, subject, self.types_of(subject))

    def blob_subjects(self, digest: str, selector: Selector | None = None) -> list[Address]:
        subs = set()
        for q in self.store.visible(self.peer_id):
            if isinstance(q.object, BlobRef) and q.object.hash == digest:
                if selector is None or selector.covers(q.subject):
                    subs.add(q.subject.unpinned())
        return sorted(subs, key=str)

    def blob_level(self, requester: str, digest: str) -> GrantLevel:
        """The weakest grant over every subject that references the blob."""
        subjects = self.blob_subjects(digest)
        if not subjects:
            return GrantLevel.ENCRYPTED if digest in self.held_chunks else GrantLevel.DENY
        return min(self.level_for(requester, s) for s in subjects)

    def _blob_refs(self, selector: Selector) -> dict[str, BlobRef]:
        refs = {}
        for q in self.store.visible(self.peer_id):
            if isinstance(q.object, BlobRef) and selector.covers(q.subject):
                refs[q.object.hash] = q.object
        return refs

    # -- local actions ---------------------------------------------------------

    def advertise(self) -> TreeAdvert:
        heads = {ns: (cid, self.store.get_commit(cid).logical_time) for ns, cid in self.store.heads().items()}
        adv = TreeAdvert(self.peer_id, heads)
        return replace(adv, signature=sign(self.secret, adv.message()))

    def commit(self, add: Iterable[Quad] = (), remove: Iterable[Quad] = ()) -> tuple[CommitRecord, list[Outgoing]]:
        c = self.store.commit(self.peer_id, self.secret, add, remove)
        return c, self.notify(c)

    def notify(self, c: CommitRecord) -> list[Outgoing]:
        touched = [q.subject for q in c.added | c.removed]
        out = []
        head = [c.id, c.logical_time]
        for sub, sel in sorted(self.subscribers.items()):
            if any(sel.covers(s) for s in touched):
                out.append(self._request(("advert", sub), sub, "ADVERT", {"heads": {self.peer_id: head}}))
        return out

    def pin(self, target: str, selector: Selector) -> list[Outgoing]:
        if target == self.peer_id:
            raise UsageError("cannot pin your own namespace")
        if selector.root.peer != target:
            raise UsageError("selector root must lie in the target's namespace")
        self.pins[target] = PinRecord(self.peer_id, target, selector, self.now)
        return [self._want(target, selector, subscribe=True)]

    def unpin(self, target: str) -> list[Outgoing]:
        if self.pins.pop(target, None) is None:
            raise NotFound(f"no pin on {target}")
        for key in [k for k in self._pending if k[:2] == ("want", target) or k[:2] == ("blobs", target)]:
            del self._pending[key]
        return [self._send(target, "WANT", {"unsubscribe": True})]

    def resync(self) -> list[Outgoing]:
        """Re-request every pinned selector (after a partition heals, say)."""
        return [self._want(t, pin.selector, subscribe=True) for t, pin in sorted(self.pins.items())]

    def pull(self, target: str, selector: Selector) -> list[Outgoing]:
        """One-shot fetch without subscribing."""
        if selector.root.peer != target:
            raise UsageError("selector root must lie in the target's namespace")
        return [self._want(target, selector, subscribe=False)]

    def _want(self, target: str, selector: Selector, subscribe: bool) -> Outgoing:
        body = {
            "req": self._next("w"),
            "sel": selector.to_json(),
            "have": self.store.head(target),
            "subscribe": subscribe,
        }
        return self._request(("want", target), target, "WANT", body)

    def start_query(self, pattern: Pattern, targets: Iterable[str]) -> tuple[str, list[Outgoing]]:
        qid = self._next("q")
        targets = frozenset(targets) - {self.peer_id}
        self.queries[qid] = QueryState(qid, pattern, targets)
        body = {"q": qid, "pattern": pattern_to_json(pattern)}
        return qid, [self._request(("query", t, qid), t, "QUERY", body) for t in sorted(targets)]

    def send_activity(self, receiver: str, act: Activity) -> Outgoing:
        return self._send(receiver, "ACTIVITY", activity_json(act))

    # -- timers ----------------------------------------------------------------

    def tick(self, now: int) -> list[Outgoing]:
        self.now = max(self.now, now)
        out = []
        for key, p in sorted(self._pending.items(), key=lambda kv: (kv[1].due, str(kv[0]))):
            if p.due > self.now:
                continue
            if p.attempts >= MAX_ATTEMPTS:
                del self._pending[key]
                self._give_up(key)
                continue
            p.attempts += 1
            p.due = self.now + _backoff(p.attempts)
            out.append(self._send(p.receiver, p.kind, p.body))
        return out

    def _give_up(self, key: tuple) -> None:
        log.debug("%s gave up on %s", self, key)
        if key[0] == "query":
            q = self.queries.get(key[2])
            if q is not None:
                q.abandoned.add(key[1])

    # -- receiving -------------------------------------------------------------

    def handle(self, frame: bytes, now: int | None = None) -> list[Outgoing]:
        if now is not None:
            self.now = max(self.now, now)
        try:
            env = open_envelope(frame, self.store.identity_map())
        except IntegrityError as exc:
            self.stats["rejected"] += 1
            log.debug("%s rejected a frame: %s", self, exc)
            return []
        try:
            if env.kind == "HELLO":
                return self._on_hello(env.sender, env.body)
            handler = getattr(self, "_on_" + env.kind.lower())
            return handler(env.sender, env.json())
        except (IntegrityError, KeyError, TypeError, ValueError) as exc:
            self.stats["rejected"] += 1
            log.debug("%s rejected %s from %s: %s", self, env.kind, env.sender[:8], exc)
            return []

    def _on_hello(self, sender: str, body: bytes) -> list[Outgoing]:
        from folkfed.identity import decode_record

        self.store.register_identity(decode_record(body))
        return []

    def _on_advert(self, sender: str, body: dict) -> list[Outgoing]:
        pin = self.pins.get(sender)
        if pin is None:
            return [self._send(sender, "WANT", {"unsubscribe": True})]
        head = body["heads"].get(sender)
        if head is not None and self.store.has_commit(head[0]):
            return [self._send(sender, "WANT", {"ack": True, "have": self.store.head(sender)})]
        return [self._want(sender, pin.selector, subscribe=True)]

    def _on_want(self, sender: str, body: dict) -> list[Outgoing]:
        self._pending.pop(("advert", sender), None)
        if body.get("unsubscribe"):
            self.subscribers.pop(sender, None)
            return []
        if body.get("ack"):
            return []
        if "blobs" in body:
            return [self._serve_blob(sender, h, body.get("sel")) for h in body["blobs"]]
        selector = Selector.from_json(body["sel"])
        if body.get("subscribe"):
            self.subscribers[sender] = selector
        return [self._send(sender, "COMMITS", self._commits_body(sender, selector, body.get("have"), body["req"]))]

    def _commits_body(self, requester: str, selector: Selector, have: str | None, req: str) -> dict:
        records: list[str] = []
        manifest: list[dict] = []
        head = self.store.head(self.peer_id)
        if selector.root.peer == self.peer_id:
            if self.level_for(requester, selector.root) >= GrantLevel.METADATA:
                chain = self.store.log(self.peer_id)
                ids = [c.id for c in chain]
                start = ids.index(have) + 1 if have in ids else 0
                records = [b64(encode_commit(c)) for c in chain[start:]]
            if selector.include_blobs:
                for digest, ref in sorted(self._blob_refs(selector).items()):
                    if not self.store.has_blob(digest):
                        continue
                    level = self.blob_level(requester, digest)
                    mode = {GrantLevel.FULL: "plain", GrantLevel.ENCRYPTED: "cipher"}.get(level)
                    if mode is not None:
                        manifest.append({"h": digest, "n": ref.length, "c": ref.codec, "mode": mode})
        return {
            "req": req,
            "ns": self.peer_id,
            "sel": selector.to_json(),
            "head": None if head is None else [head, self.store.get_commit(head).logical_time],
            "records": records,
            "manifest": manifest,
        }

    def _serve_blob(self, requester: str, digest: str, sel) -> Outgoing:
        level = self.blob_level(requester, digest)
        subjects = self.blob_subjects(digest)
        where = subjects[0] if subjects else Address(self.peer_id)
        body: dict = {"h": digest}
        payload = 0
        if level == GrantLevel.FULL and self.store.has_blob(digest):
            data = self.store.get_blob(digest)
            ref = self._ref_for(digest, len(data))
            body.update(mode="plain", data=b64(data), c=ref.codec, n=ref.length)
            payload = len(data)
        elif level == GrantLevel.ENCRYPTED and self.store.has_blob(digest):
            data = self.store.get_blob(digest)
            ref = self._ref_for(digest, len(data))
            cts = encrypt_chunks(self.keyring.blob_key(digest), ref, data, self.chunk_size)
            body.update(mode="cipher", chunks=[b64(ct) for ct in cts], c=ref.codec, n=ref.length)
            payload = sum(len(ct) for ct in cts)
        elif level >= GrantLevel.ENCRYPTED and digest in self.held_chunks:
            cts = self.held_chunks[digest]
            body.update(mode="cipher", chunks=[b64(ct) for ct in cts])
            payload = sum(len(ct) for ct in cts)
        else:
            body["mode"] = "refused"
        if payload:
            self._seq += 1
            report = TransferReport(self.peer_id, requester, payload, where, self._seq)
            body["report"] = {"sel": str(where), "nonce": self._seq, "bytes": payload, "usig": sign(self.secret, report.message()).hex()}
        return self._send(requester, "BLOB", body)

    def _ref_for(self, digest: str, length: int) -> BlobRef:
        for q in self.store.visible(self.peer_id):
            if isinstance(q.object, BlobRef) and q.object.hash == digest:
                return q.object
        return BlobRef(digest, length)

    def _on_commits(self, sender: str, body: dict) -> list[Outgoing]:
        key = ("want", sender)
        p = self._pending.get(key)
        if p is not None and p.body.get("req") == body["req"]:
            del self._pending[key]
        commits = [decode_commit(unb64(r)) for r in body["records"]]
        for c in commits:
            if c.author != sender:
                raise IntegrityError("peer served commits outside its namespace")
            if self.store.apply(c):
                self.stats["commits_applied"] += 1
        pin = self.pins.get(sender)
        if pin is not None:
            self.pins[sender] = replace(pin, since=self.now)
        wanted = []
        for entry in body["manifest"]:
            digest = entry["h"]
            if entry["mode"] == "plain" and not self.store.has_blob(digest):
                wanted.append(digest)
            elif entry["mode"] == "cipher" and digest not in self.held_chunks and not self.store.has_blob(digest):
                wanted.append(digest)
        if not wanted:
            return []
        bkey = ("blobs", sender)
        if bkey in self._pending:
            known = self._pending[bkey].body["blobs"]
            wanted = sorted(set(known) | set(wanted))
        return [self._request(bkey, sender, "WANT", {"blobs": sorted(wanted), "sel": body["sel"]})]

    def _on_blob(self, sender: str, body: dict) -> list[Outgoing]:
        digest = body["h"]
        mode = body["mode"]
        if mode == "plain":
            data = unb64(body["data"])
            if hashlib.sha256(data).hexdigest() != digest:
                raise IntegrityError("blob content does not match its hash")
            self.store.put_blob(data, body.get("c", "bin"))
            self.stats["blobs_fetched"] += 1
        elif mode == "cipher":
            self.held_chunks[digest] = tuple(unb64(c) for c in body["chunks"])
            self.stats["chunks_held"] += len(body["chunks"])
        else:
            self.stats["refused"] += 1
        bkey = ("blobs", sender)
        p = self._pending.get(bkey)
        if p is not None:
            rest = [h for h in p.body["blobs"] if h != digest]
            if rest:
                p.body = {**p.body, "blobs": rest}
            else:
                del self._pending[bkey]
        out = []
        rep = body.get("report")
        if rep is not None:
            report = TransferReport(sender, self.peer_id, int(rep["bytes"]), parse_address(rep["sel"]), int(rep["nonce"]))
            usig = bytes.fromhex(rep["usig"])
            if verify(self.store.identity(sender), report.message(), usig):
                report = replace(report, uploader_sig=usig, downloader_sig=sign(self.secret, report.message()))
                self.reports.append(report)
                if self.tracker is not None and self.tracker != self.peer_id:
                    out.append(self._send(self.tracker, "REPORT", report_json(report)))
                elif self.federation is not None:
                    self._record(report)
        return out

    def _record(self, report: TransferReport) -> None:
        try:
            self.federation = record_transfer(self.federation, report, self.store.identity_map())
        except FolkError as exc:
            log.debug("%s dropped a transfer report: %s", self, exc)

    def _on_report(self, sender: str, body: dict) -> list[Outgoing]:
        if self.federation is not None:
            report = report_from_json(body)
            if sender in (report.uploader, report.downloader):
                self._record(report)
        return []

    def _on_activity(self, sender: str, body: dict) -> list[Outgoing]:
        if "response" in body:
            self.responses.append(body)
            return []
        if self.federation is None:
            return [self._send(sender, "ACTIVITY", {"response": "Reject", "reason": "not a federation peer"})]
        act = activity_from_json(body)
        if act.actor != sender:
            raise IntegrityError("activity actor is not the envelope sender")
        self.federation, resp = handle_activity(self.federation, act, self.store.identity_map())
        return [self._send(sender, "ACTIVITY", {"response": resp.kind, "reason": resp.reason, "kind": act.kind})]

    def _on_query(self, sender: str, body: dict) -> list[Outgoing]:
        pattern = pattern_from_json(body["pattern"])
        hits = [
            q for q in self.store.local_query(pattern)
            if q.author == self.peer_id and self.level_for(sender, q.subject) >= GrantLevel.METADATA
        ]
        return [self._send(sender, "RESULTS", {"q": body["q"], "quads": b64(encode_quads(hits))})]

    def _on_results(self, sender: str, body: dict) -> list[Outgoing]:
        q = self.queries.get(body["q"])
        if q is None or sender not in q.targets:
            return []
        self._pending.pop(("query", sender, body["q"]), None)
        q.results[sender] = decode_quads(unb64(body["quads"]))
        return []


def report_json(r: TransferReport) -> dict:
    return {
        "uploader": r.uploader,
        "downloader": r.downloader,
        "bytes": r.bytes,
        "sel": str(r.selector),
        "nonce": r.nonce,
        "usig": r.uploader_sig.hex(),
        "dsig": r.downloader_sig.hex(),
    }


def report_from_json(obj: Mapping) -> TransferReport:
    return TransferReport(
        obj["uploader"],
        obj["downloader"],
        int(obj["bytes"]),
        parse_address(obj["sel"]),
        int(obj["nonce"]),
        bytes.fromhex(obj["usig"]),
        bytes.fromhex(obj["dsig"]),
    )


def activity_json(act: Activity) -> dict:
    """The ACTIVITY body for ``act``; also the on-disk activity file format."""
    return {
        "kind": act.kind,
        "actor": act.actor,
        "payload": b64(encode_quads(act.payload)),
        "sig": act.signature.hex(),
        "report": None if act.report is None else report_json(act.report),
    }


def activity_from_json(body: Mapping) -> Activity:
    return Activity(
        body["kind"],
        body["actor"],
        decode_quads(unb64(body["payload"])),
        bytes.fromhex(body["sig"]),
        None if body.get("report") is None else report_from_json(body["report"]),
    )
