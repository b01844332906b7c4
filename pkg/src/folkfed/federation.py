"""Federation state: membership, policy, grants, follow scopes and the tracker ledger.

``FederationState`` is an immutable value.  Every transition returns a new
state, so replaying the same activity log from the same start state always
lands on the same result.
"""

from __future__ import annotations

import base64
import hashlib
from collections import deque
from dataclasses import dataclass, field, replace
from decimal import Decimal
from enum import IntEnum
from types import MappingProxyType
from typing import Iterable, Mapping

from folkfed.errors import Conflict, IntegrityError, NotFound, PermissionDenied, UsageError
from folkfed.identity import IdentityRecord, SecretHandle, sign, verify_historical
from folkfed.linkstore import Store, decode_quads, encode_quads
from folkfed.schema import extends_closure
from folkfed.terms import TYPE_PREDICATE, Address, Literal, Pattern, Quad, Term, kind_tag, parse_address
from folkfed.vocab import ITEM, PERMISSIONS, SHARE_DATA, SHARE_ENCRYPTED, SHARE_METADATA, SHARE_NONE

ACTIVITY_KINDS = ("Join", "Leave", "Follow", "Announce", "Report")
FOLLOW_DEPTH = Address("fed", ("followDepth",))
MIN_RATIO = Address("fed", ("minRatio",))
GRACE_BYTES = Address("fed", ("graceBytes",))
FREELEECH = Address("fed", ("freeleech",))


def _frozen(mapping) -> Mapping:
    return MappingProxyType(dict(mapping))


class GrantLevel(IntEnum):
    DENY = 0
    ENCRYPTED = 1
    METADATA = 2
    FULL = 3


_LEVEL_OF = {
    str(SHARE_DATA): GrantLevel.FULL,
    str(SHARE_METADATA): GrantLevel.METADATA,
    str(SHARE_ENCRYPTED): GrantLevel.ENCRYPTED,
    str(SHARE_NONE): GrantLevel.DENY,
}


# ---------------------------------------------------------------------------
# value types


@dataclass(frozen=True)
class Policy:
    on_receive: Mapping[str, str] = field(default_factory=lambda: _frozen({}))
    allow_schema: Address | None = None
    min_ratio: Decimal = Decimal(0)
    grace_bytes: int = 0
    freeleech: frozenset[Address] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "on_receive", _frozen(self.on_receive))
        object.__setattr__(self, "min_ratio", Decimal(str(self.min_ratio)))
        if self.min_ratio < 0 or self.grace_bytes < 0:
            raise UsageError("min_ratio and grace_bytes must be non-negative")

    def is_freeleech(self, selector: Address) -> bool:
        return any(selector.unpinned().is_within(s) for s in self.freeleech)


@dataclass(frozen=True)
class LedgerEntry:
    bytes_up: int = 0
    bytes_down: int = 0
    credits_spent: int = 0


@dataclass(frozen=True)
class Bounty:
    id: str
    sponsor: str
    credit_bytes: int
    wanted: Address
    open: bool = True
    fulfiller: str | None = None
    evidence: str | None = None


@dataclass(frozen=True)
class TransferReport:
    uploader: str
    downloader: str
    bytes: int
    selector: Address
    nonce: int = 0
    uploader_sig: bytes = b""
    downloader_sig: bytes = b""

    def message(self) -> bytes:
        return "\x1f".join(
            ["folkfed-transfer", self.uploader, self.downloader, str(self.bytes), str(self.selector), str(self.nonce)]
        ).encode("utf-8")

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.message()).hexdigest()


def make_report(
    uploader: str,
    downloader: str,
    nbytes: int,
    selector: Address,
    up_secret: SecretHandle,
    down_secret: SecretHandle,
    nonce: int = 0,
) -> TransferReport:
    r = TransferReport(uploader, downloader, nbytes, selector, nonce)
    return replace(r, uploader_sig=sign(up_secret, r.message()), downloader_sig=sign(down_secret, r.message()))


@dataclass(frozen=True)
class Activity:
    kind: str
    actor: str
    payload: frozenset[Quad] = frozenset()
    signature: bytes = b""
    report: TransferReport | None = None

    def message(self) -> bytes:
        extra = self.report.hash.encode("ascii") if self.report is not None else b""
        return b"\x1e".join([b"folkfed-activity", self.kind.encode("utf-8"), self.actor.encode("utf-8"), encode_quads(self.payload), extra])


def make_activity(
    kind: str,
    actor: str,
    secret: SecretHandle,
    payload: Iterable[Quad] = (),
    report: TransferReport | None = None,
) -> Activity:
    act = Activity(kind, actor, frozenset(payload), b"", report)
    return replace(act, signature=sign(secret, act.message()))


def follow_payload(actor: str, target: str, depth: int) -> frozenset[Quad]:
    if depth < 1:
        raise UsageError("follow depth must be at least 1")
    return frozenset({Quad(actor, Address(target), FOLLOW_DEPTH, Literal.integer(depth))})


@dataclass(frozen=True)
class Response:
    kind: str
    reason: str = ""

    @property
    def accepted(self) -> bool:
        return self.kind == "Accept"


@dataclass(frozen=True)
class FederationState:
    fed_peer: str
    members: frozenset[str] = frozenset()
    policy: Policy = field(default_factory=Policy)
    follows: Mapping[tuple[str, str], int] = field(default_factory=lambda: _frozen({}))
    ledger: Mapping[str, LedgerEntry] = field(default_factory=lambda: _frozen({}))
    bounties: tuple[Bounty, ...] = ()
    index: Mapping[tuple[str, tuple[str, str]], frozenset[str]] = field(default_factory=lambda: _frozen({}))
    announcements: Mapping[str, frozenset[Quad]] = field(default_factory=lambda: _frozen({}))
    seen_reports: frozenset[str] = frozenset()
    freeleech_bytes: int = 0
    bounty_credits: int = 0

    def __post_init__(self):
        for name in ("follows", "ledger", "index", "announcements"):
            value = getattr(self, name)
            if not isinstance(value, MappingProxyType):
                object.__setattr__(self, name, _frozen(value))

    def entry(self, peer: str) -> LedgerEntry:
        return self.ledger.get(peer, LedgerEntry())


# ---------------------------------------------------------------------------
# activities


def _verify_actor(identities: Mapping[str, IdentityRecord], peer: str, message: bytes, sig: bytes) -> None:
    record = identities.get(peer)
    if record is None or not verify_historical(record, message, sig):
        raise IntegrityError(f"signature by {peer} does not verify")


def handle_activity(
    state: FederationState,
    act: Activity,
    identities: Mapping[str, IdentityRecord],
) -> tuple[FederationState, Response]:
    """Apply one signed activity.  Pure: the input state is never modified."""
    _verify_actor(identities, act.actor, act.message(), act.signature)
    if act.kind == "Join":
        answer = state.policy.on_receive.get("Join", "Reject")
        if answer != "Accept":
            return state, Response("Reject", "federation does not accept joins")
        joined = replace(state, members=state.members | {act.actor})
        return index_announce(joined, act.actor, act.payload), Response("Accept")
    if act.kind == "Leave":
        if act.actor not in state.members:
            return state, Response("Reject", "not a member")
        return _drop_member(state, act.actor), Response("Accept")
    if act.kind == "Follow":
        follows = dict(state.follows)
        for q in act.payload:
            if q.author != act.actor or q.predicate != FOLLOW_DEPTH or not isinstance(q.object, Literal) or q.object.kind != "int":
                return state, Response("Reject", "malformed follow payload")
            depth = q.object.value
            if depth < 1:
                return state, Response("Reject", "follow depth must be at least 1")
            follows[(act.actor, q.subject.peer)] = depth
        return replace(state, follows=follows), Response("Accept")
    if act.kind == "Announce":
        try:
            return index_announce(state, act.actor, act.payload), Response("Accept")
        except PermissionDenied as exc:
            return state, Response("Reject", str(exc))
    if act.kind == "Report":
        if act.report is None or act.actor not in (act.report.uploader, act.report.downloader):
            return state, Response("Reject", "report activity needs a report from a party to it")
        try:
            return record_transfer(state, act.report, identities), Response("Accept")
        except Conflict as exc:
            return state, Response("Reject", str(exc))
    return state, Response("Reject", f"unknown activity kind {act.kind!r}")


def _drop_member(state: FederationState, peer: str) -> FederationState:
    announcements = {k: v for k, v in state.announcements.items() if k != peer}
    return replace(state, members=state.members - {peer}, announcements=announcements, index=_build_index(announcements))


def _index_key(q: Quad) -> tuple[str, tuple[str, str]]:
    return (str(q.predicate), (kind_tag(q.object), str(q.object)))


def _build_index(announcements: Mapping[str, frozenset[Quad]]) -> dict:
    index: dict = {}
    for peer, quads in announcements.items():
        for q in quads:
            key = _index_key(q)
            index[key] = index.get(key, frozenset()) | {peer}
    return index


def index_announce(state: FederationState, member: str, summary: Iterable[Quad]) -> FederationState:
    if member not in state.members:
        raise PermissionDenied(f"{member} is not a member of {state.fed_peer}")
    summary = frozenset(summary)
    announcements = dict(state.announcements)
    announcements[member] = announcements.get(member, frozenset()) | summary
    index = dict(state.index)
    for q in summary:
        key = _index_key(q)
        index[key] = index.get(key, frozenset()) | {member}
    return replace(state, announcements=announcements, index=index)


def hint(state: FederationState, pattern: Pattern) -> frozenset[str]:
    """Peers whose announcements contain a quad matching ``pattern``."""
    if pattern.predicate is not None and pattern.object is not None and pattern.author is None and pattern.subject is None:
        return state.index.get((str(pattern.predicate), (kind_tag(pattern.object), str(pattern.object))), frozenset())
    return frozenset(peer for peer, quads in state.announcements.items() if any(pattern.matches(q) for q in quads))


# ---------------------------------------------------------------------------
# schema admission & permissions


def admit_schema(state: FederationState, schema: Address, store: Store) -> bool:
    """True iff ``schema`` strictly extends the policy's allowed root."""
    root = state.policy.allow_schema
    if root is None:
        return True
    schema = Address(store.namespace_of(schema), schema.segments)
    closure = extends_closure(store, schema) - {schema}
    return Address(store.namespace_of(root), root.segments) in closure


@dataclass(frozen=True)
class Grant:
    federation: str
    level: GrantLevel
    filter: Address | None = None


@dataclass(frozen=True)
class ObjectRule:
    """Per-object rule: extra grants plus an optional recipient allowlist.

    Allowlisted recipients get ``level``; everyone else is capped at
    Encrypted for this object.
    """

    grants: tuple[Grant, ...] = ()
    allowlist: frozenset[str] | None = None
    level: GrantLevel = GrantLevel.FULL


@dataclass(frozen=True)
class PermissionRuleSet:
    grants: tuple[Grant, ...] = ()
    object_rules: Mapping[Address, ObjectRule] = field(default_factory=lambda: _frozen({}))

    def __post_init__(self):
        if not isinstance(self.object_rules, MappingProxyType):
            object.__setattr__(self, "object_rules", _frozen(self.object_rules))


def _grant_matches(g: Grant, feds: frozenset[str], types: frozenset[Address]) -> bool:
    return g.federation in feds and (g.filter is None or g.filter in types)


def authorize(
    rules: PermissionRuleSet,
    requester: str,
    requester_feds: Iterable[str],
    object: Address,
    object_type: Address | Iterable[Address] | None = None,
) -> GrantLevel:
    """Access level for ``requester`` on ``object``.

    Grants combine by maximum.  An allowlist on a covering object rule caps
    off-list requesters at Encrypted.  ``object_type`` may be a single type
    or an extends-closure; type filters match any member of it.

    ======================  ==================  =====================
    best matching grant     no allowlist        allowlist, off-list
    ======================  ==================  =====================
    none                    Deny                Deny
    Encrypted               Encrypted           Encrypted
    Metadata                Metadata            Encrypted
    Full                    Full                Encrypted
    ======================  ==================  =====================

    On-list requesters additionally receive the rule's own level.
    """
    feds = frozenset(requester_feds) | {requester}
    if object_type is None:
        types: frozenset[Address] = frozenset()
    elif isinstance(object_type, Address):
        types = frozenset({object_type.unpinned()})
    else:
        types = frozenset(t.unpinned() for t in object_type)
    level = GrantLevel.DENY
    for g in rules.grants:
        if _grant_matches(g, feds, types):
            level = max(level, g.level)
    capped = False
    target = object.unpinned()
    for addr in sorted(rules.object_rules, key=str):
        if not target.is_within(addr):
            continue
        rule = rules.object_rules[addr]
        for g in rule.grants:
            if _grant_matches(g, feds, types):
                level = max(level, g.level)
        if rule.allowlist is not None:
            if requester in rule.allowlist:
                level = max(level, rule.level)
            else:
                capped = True
    if capped:
        level = min(level, GrantLevel.ENCRYPTED)
    return GrantLevel(level)


def _children(quads_by_subject, node):
    return sorted(quads_by_subject.get(node, ()), key=Quad.sort_key)


def rules_from_quads(quads: Iterable[Quad]) -> PermissionRuleSet:
    """Collect every ``a @fed:Permissions`` declaration into one rule set."""
    by_subject: dict[Address, list[Quad]] = {}
    for q in quads:
        by_subject.setdefault(q.subject.unpinned(), []).append(q)
    grants: list[Grant] = []
    object_rules: dict[Address, ObjectRule] = {}
    for subject in sorted(by_subject, key=str):
        top = _children(by_subject, subject)
        if not any(q.predicate == TYPE_PREDICATE and q.object == PERMISSIONS for q in top):
            continue
        targets = [q.object for q in top if str(q.predicate) == "permissionsFor" and isinstance(q.object, Address)]
        found: list[Grant] = []
        allow: set[str] | None = None
        for q in top:
            if str(q.predicate) == "federatedWith" and isinstance(q.object, Address):
                found.extend(_grants_from_node(by_subject, q.object))
            elif str(q.predicate) == "accessRuleSet":
                allow = allow if allow is not None else set()
            elif isinstance(q.predicate, Address) and q.predicate.name == "authorizedRecipient":
                allow = (allow or set()) | _recipients(by_subject, q.object)
        for target in targets:
            if not target.segments and allow is None:
                grants.extend(found)
            else:
                prev = object_rules.get(target.unpinned(), ObjectRule())
                merged_allow = prev.allowlist
                if allow is not None:
                    merged_allow = (merged_allow or frozenset()) | frozenset(allow)
                object_rules[target.unpinned()] = ObjectRule(prev.grants + tuple(found), merged_allow)
    return PermissionRuleSet(tuple(grants), object_rules)


def _grants_from_node(by_subject, node: Address) -> list[Grant]:
    name, level, filt = None, None, None
    for q in _children(by_subject, node):
        if str(q.predicate) == "name" and isinstance(q.object, Address):
            name = q.object.peer
        elif q.predicate == ITEM and str(q.object) in _LEVEL_OF:
            level = max(level or GrantLevel.DENY, _LEVEL_OF[str(q.object)])
        elif str(q.predicate) == "is" and isinstance(q.object, Address):
            filt = q.object.unpinned()
    if name is None or level is None:
        return []
    return [Grant(name, level, filt)]


def _recipients(by_subject, obj) -> set[str]:
    if isinstance(obj, Literal) and obj.kind == "string":
        return {obj.value}
    if isinstance(obj, Address):
        if not obj.segments:
            return {obj.peer}
        items = [q.object for q in by_subject.get(obj.unpinned(), ()) if q.predicate == ITEM]
        if items:
            out: set[str] = set()
            for item in items:
                out |= _recipients(by_subject, item)
            return out
        return {str(obj)}
    return set()


def policy_from_quads(fed: Address, quads: Iterable[Quad]) -> Policy:
    """Read a federation's policy from its declaration (``onReceive``, ``allowSchema``...)."""
    by_subject: dict[Address, list[Quad]] = {}
    for q in quads:
        by_subject.setdefault(q.subject.unpinned(), []).append(q)
    on_receive: dict[str, str] = {}
    allow = None
    min_ratio = Decimal(0)
    grace = 0
    freeleech = set()
    for q in _children(by_subject, fed):
        pred = str(q.predicate)
        if pred == "onReceive" and isinstance(q.object, Address):
            for r in _children(by_subject, q.object):
                if isinstance(r.predicate, Address) and isinstance(r.object, Address):
                    on_receive[r.predicate.name] = r.object.name
        elif pred == "allowSchema" and isinstance(q.object, Address):
            for r in _children(by_subject, q.object):
                if str(r.predicate) == "extensionOf" and isinstance(r.object, Address):
                    allow = r.object.unpinned()
        elif q.predicate == MIN_RATIO and isinstance(q.object, Literal):
            min_ratio = Decimal(str(q.object.value))
        elif q.predicate == GRACE_BYTES and isinstance(q.object, Literal):
            grace = int(q.object.value)
        elif q.predicate == FREELEECH and isinstance(q.object, Address):
            freeleech.add(q.object.unpinned())
    return Policy(on_receive, allow, min_ratio, grace, frozenset(freeleech))


# ---------------------------------------------------------------------------
# follow scopes


def view_scope(state: FederationState, origin: str) -> frozenset[str]:
    """Peers visible from ``origin``; each first follow edge sets the hop budget."""
    adjacency: dict[str, list[str]] = {}
    for (a, b) in sorted(state.follows):
        adjacency.setdefault(a, []).append(b)
    seen = {origin}
    for first in adjacency.get(origin, []):
        budget = state.follows[(origin, first)]
        best = {first: 1}
        queue = deque([first])
        while queue:
            node = queue.popleft()
            if best[node] >= budget:
                continue
            for nxt in adjacency.get(node, []):
                if nxt not in best:
                    best[nxt] = best[node] + 1
                    queue.append(nxt)
        seen.update(best)
    return frozenset(seen)


# ---------------------------------------------------------------------------
# ledger, ratio, bounties


def record_transfer(
    state: FederationState,
    report: TransferReport,
    identities: Mapping[str, IdentityRecord],
) -> FederationState:
    if report.bytes <= 0:
        raise UsageError("transfer reports must carry a positive byte count")
    if report.hash in state.seen_reports:
        raise Conflict("duplicate transfer report")
    message = report.message()
    _verify_actor(identities, report.uploader, message, report.uploader_sig)
    _verify_actor(identities, report.downloader, message, report.downloader_sig)
    ledger = dict(state.ledger)
    up = state.entry(report.uploader)
    ledger[report.uploader] = replace(up, bytes_up=up.bytes_up + report.bytes)
    free = state.policy.is_freeleech(report.selector)
    if not free:
        down = ledger.get(report.downloader, LedgerEntry())
        ledger[report.downloader] = replace(down, bytes_down=down.bytes_down + report.bytes)
    return replace(
        state,
        ledger=ledger,
        seen_reports=state.seen_reports | {report.hash},
        freeleech_bytes=state.freeleech_bytes + (report.bytes if free else 0),
    )


def ratio_ok(bytes_up: int, bytes_down: int, min_ratio: Decimal, grace_bytes: int) -> bool:
    if min_ratio == 0 or bytes_down <= grace_bytes:
        return True
    return Decimal(bytes_up) >= min_ratio * Decimal(bytes_down)


def check_ratio(state: FederationState, peer: str) -> bool:
    e = state.entry(peer)
    return ratio_ok(e.bytes_up, e.bytes_down, state.policy.min_ratio, state.policy.grace_bytes)


def spendable(state: FederationState, peer: str) -> Decimal:
    """Upload surplus not yet spent on or committed to bounties."""
    e = state.entry(peer)
    committed = sum(b.credit_bytes for b in state.bounties if b.open and b.sponsor == peer)
    return Decimal(e.bytes_up) - Decimal(e.bytes_down) * state.policy.min_ratio - e.credits_spent - committed


def post_bounty(state: FederationState, sponsor: str, credit_bytes: int, wanted: Address) -> FederationState:
    if credit_bytes <= 0:
        raise UsageError("bounty credit must be positive")
    if spendable(state, sponsor) < credit_bytes:
        raise Conflict(f"insufficient surplus for a {credit_bytes}-byte bounty")
    seq = len(state.bounties)
    bid = hashlib.sha256(f"{state.fed_peer}\x1f{seq}\x1f{sponsor}\x1f{credit_bytes}\x1f{wanted}".encode()).hexdigest()
    return replace(state, bounties=state.bounties + (Bounty(bid, sponsor, credit_bytes, wanted.unpinned()),))


def fulfill_bounty(state: FederationState, fulfiller: str, bounty_id: str, evidence: str) -> FederationState:
    for i, b in enumerate(state.bounties):
        if b.id == bounty_id:
            break
    else:
        raise NotFound(f"unknown bounty {bounty_id}")
    if not b.open:
        raise Conflict(f"bounty {bounty_id} is already closed")
    if len(evidence) != 64:
        raise UsageError("evidence must be a commit id")
    ledger = dict(state.ledger)
    f = state.entry(fulfiller)
    ledger[fulfiller] = replace(f, bytes_up=f.bytes_up + b.credit_bytes)
    s = ledger.get(b.sponsor, LedgerEntry())
    ledger[b.sponsor] = replace(s, credits_spent=s.credits_spent + b.credit_bytes)
    closed = replace(b, open=False, fulfiller=fulfiller, evidence=evidence)
    bounties = state.bounties[:i] + (closed,) + state.bounties[i + 1:]
    return replace(state, ledger=ledger, bounties=bounties, bounty_credits=state.bounty_credits + b.credit_bytes)


def conservation_holds(state: FederationState) -> bool:
    """Uploads = counted downloads + freeleech downloads + bounty credits."""
    up = sum(e.bytes_up for e in state.ledger.values())
    down = sum(e.bytes_down for e in state.ledger.values())
    return up == down + state.freeleech_bytes + state.bounty_credits


def state_quads(state: FederationState) -> frozenset[Quad]:
    """Membership and ledger as quads in the federation's own namespace."""
    root = Address(state.fed_peer)
    author = state.fed_peer
    out = {Quad(author, root, Term("member"), Address(m)) for m in state.members}
    for peer, e in state.ledger.items():
        row = f"{peer} {e.bytes_up} {e.bytes_down} {e.credits_spent}"
        out.add(Quad(author, root, Term("ledgerEntry"), Literal.string(row)))
    return frozenset(out)


# ---------------------------------------------------------------------------
# persistence


def state_to_json(state: FederationState) -> dict:
    """A JSON-ready dict; :func:`state_from_json` inverts it exactly."""
    p = state.policy
    return {
        "fed_peer": state.fed_peer,
        "members": sorted(state.members),
        "policy": {
            "on_receive": dict(sorted(p.on_receive.items())),
            "allow_schema": None if p.allow_schema is None else str(p.allow_schema),
            "min_ratio": str(p.min_ratio),
            "grace_bytes": p.grace_bytes,
            "freeleech": sorted(str(a) for a in p.freeleech),
        },
        "follows": [[a, b, d] for (a, b), d in sorted(state.follows.items())],
        "ledger": {k: [e.bytes_up, e.bytes_down, e.credits_spent] for k, e in sorted(state.ledger.items())},
        "bounties": [
            {"id": b.id, "sponsor": b.sponsor, "credit": b.credit_bytes, "wanted": str(b.wanted),
             "open": b.open, "fulfiller": b.fulfiller, "evidence": b.evidence}
            for b in state.bounties
        ],
        "announcements": {
            k: base64.b64encode(encode_quads(v)).decode("ascii") for k, v in sorted(state.announcements.items())
        },
        "seen_reports": sorted(state.seen_reports),
        "freeleech_bytes": state.freeleech_bytes,
        "bounty_credits": state.bounty_credits,
    }


def state_from_json(obj: Mapping) -> FederationState:
    p = obj["policy"]
    policy = Policy(
        p["on_receive"],
        None if p["allow_schema"] is None else parse_address(p["allow_schema"]),
        Decimal(p["min_ratio"]),
        int(p["grace_bytes"]),
        frozenset(parse_address(a) for a in p["freeleech"]),
    )
    announcements = {k: decode_quads(base64.b64decode(v)) for k, v in obj["announcements"].items()}
    return FederationState(
        obj["fed_peer"],
        frozenset(obj["members"]),
        policy,
        {(a, b): int(d) for a, b, d in obj["follows"]},
        {k: LedgerEntry(*map(int, v)) for k, v in obj["ledger"].items()},
        tuple(
            Bounty(b["id"], b["sponsor"], int(b["credit"]), parse_address(b["wanted"]), b["open"], b["fulfiller"], b["evidence"])
            for b in obj["bounties"]
        ),
        _build_index(announcements),
        announcements,
        frozenset(obj["seen_reports"]),
        int(obj["freeleech_bytes"]),
        int(obj["bounty_credits"]),
    )
