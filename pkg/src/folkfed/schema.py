"""Types as links: loading, flattening, validation, translation and diffing.

A type ``T`` declares a field with a quad ``(T, p, N)`` where ``N`` is a
direct child of ``T`` that itself carries ``a X`` or ``extends X``; ``p`` is
the field name and ``X`` its semantic type.  Everything else on ``T`` apart
from its own ``extends`` link is kept as annotation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Callable, Iterable, Mapping

from folkfed.errors import CycleError, FolkError, NotFound, UsageError
from folkfed.linkstore import ObjectRecord, Store
from folkfed.terms import EXTENDS, TYPE_PREDICATE, Address, Literal, Quad, Term, kind_tag
from folkfed.vocab import (
    AGGREGATE,
    BROAD_MATCH,
    EXACT_MATCH,
    ITEM,
    MERGE_OF,
    NARROW_MATCH,
    TRANSLATED_BY,
)

MAX_DEPTH = 64
REQUIRED = Term("required")
DEFAULT = Term("default")
PARAMETERIZES = Term("parameterizes")
TRUE = Term("true")
NOTE = Address("skos", ("note",))
RELATIONS = {str(EXACT_MATCH): "exactMatch", str(NARROW_MATCH): "narrowMatch", str(BROAD_MATCH): "broadMatch"}


@dataclass(frozen=True)
class FieldDecl:
    name: str
    type: Address | Term
    required: bool = False
    default: Literal | None = None
    parameterizes: Address | None = None
    relation: str = "a"


@dataclass(frozen=True)
class TypeDef:
    address: Address
    extends: Address | None = None
    fields: tuple[FieldDecl, ...] = ()
    annotations: frozenset[Quad] = frozenset()

    def field_map(self) -> dict[str, FieldDecl]:
        return {f.name: f for f in self.fields}


@dataclass(frozen=True)
class ValidationReport:
    missing: frozenset[str] = frozenset()
    mismatched: tuple[tuple[str, str, str], ...] = ()
    unknown_extras: frozenset[Quad] = frozenset()

    @property
    def valid(self) -> bool:
        return not self.missing and not self.mismatched


@dataclass(frozen=True)
class SchemaDiff:
    a: Address
    b: Address
    shared: frozenset[str]
    only_a: frozenset[str]
    only_b: frozenset[str]
    conflicting: frozenset[str]
    fields_a: Mapping[str, FieldDecl] = field(default_factory=dict, compare=False)
    fields_b: Mapping[str, FieldDecl] = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class TranslationLink:
    source: Address
    relation: str
    target: Address
    transform: Address | None = None
    note: str | None = None
    origin: Address | None = None

    def __post_init__(self):
        if self.relation not in ("exactMatch", "narrowMatch", "broadMatch"):
            raise UsageError(f"unknown translation relation {self.relation!r}")

    def inverse(self) -> "TranslationLink":
        return TranslationLink(self.target, self.relation, self.source, self.transform, self.note, self.origin)


# ---------------------------------------------------------------------------
# loading


def _is_child(node: Address, parent: Address) -> bool:
    return node.peer == parent.peer and not node.pins and node.segments[:-1] == parent.segments and len(node.segments) == len(parent.segments) + 1


def _field_from(pred, node: Address, by_subject: Mapping[Address, list[Quad]]) -> FieldDecl | None:
    kind, relation, required, default, param = None, "a", False, None, None
    for q in sorted(by_subject.get(node, ()), key=Quad.sort_key):
        if q.predicate == TYPE_PREDICATE and kind is None:
            kind, relation = q.object, "a"
        elif q.predicate == EXTENDS and kind is None:
            kind, relation = q.object, "extends"
        elif q.predicate == REQUIRED:
            required = q.object == TRUE or (isinstance(q.object, Literal) and q.object.value in ("true", True))
        elif q.predicate == DEFAULT and isinstance(q.object, Literal):
            default = q.object
        elif q.predicate == PARAMETERIZES and isinstance(q.object, Address):
            param = q.object
    if not isinstance(kind, (Address, Term)):
        return None
    return FieldDecl(str(pred), kind, required, default, param, relation)


def typedef_from_quads(address: Address, quads: Iterable[Quad]) -> TypeDef:
    by_subject: dict[Address, list[Quad]] = {}
    for q in quads:
        by_subject.setdefault(q.subject.unpinned(), []).append(q)
    top = sorted(by_subject.get(address, ()), key=Quad.sort_key)
    parents = sorted((q.object for q in top if q.predicate == EXTENDS and isinstance(q.object, Address)), key=str)
    extends = parents[0] if parents else None
    fields: dict[str, FieldDecl] = {}
    annotations = set()
    for q in top:
        if q.predicate == EXTENDS and q.object == extends:
            continue
        if isinstance(q.object, Address) and _is_child(q.object, address):
            decl = _field_from(q.predicate, q.object, by_subject)
            if decl is not None and decl.name not in fields:
                fields[decl.name] = decl
                continue
        annotations.add(q)
    return TypeDef(address, extends, tuple(fields[k] for k in sorted(fields)), frozenset(annotations))


def load_type(store: Store, address: Address) -> TypeDef:
    """Reconstruct the TypeDef at ``address`` from every quad describing it."""
    address = Address(store.namespace_of(address), address.segments)
    td = typedef_from_quads(address, store.describe(address))
    if td.extends is None and not td.fields:
        raise NotFound(f"{address} has no type-defining quads")
    return td


def _node_name(name: str) -> str:
    return name.split(":")[-1].lstrip("@")


def typedef_quads(td: TypeDef, author: str) -> frozenset[Quad]:
    """Quads that ``load_type`` turns back into ``td``."""
    out = set(td.annotations)
    if td.extends is not None:
        out.add(Quad(author, td.address, EXTENDS, td.extends))
    for f in td.fields:
        node = td.address.child(_node_name(f.name))
        pred = Address.parse(f.name) if f.name.startswith("@") else Term(f.name)
        out.add(Quad(author, td.address, pred, node))
        out.add(Quad(author, node, TYPE_PREDICATE if f.relation == "a" else EXTENDS, f.type))
        if f.required:
            out.add(Quad(author, node, REQUIRED, TRUE))
        if f.default is not None:
            out.add(Quad(author, node, DEFAULT, f.default))
        if f.parameterizes is not None:
            out.add(Quad(author, node, PARAMETERIZES, f.parameterizes))
    return frozenset(out)


# ---------------------------------------------------------------------------
# extends chains


def _parents(store: Store, address: Address) -> list[Address]:
    return sorted(
        {q.object.unpinned() for q in store.describe(address) if q.subject.unpinned() == address and q.predicate == EXTENDS and isinstance(q.object, Address)},
        key=str,
    )


def extends_chain(store: Store, type_: Address) -> tuple[Address, ...]:
    """``type_`` followed by its ancestors along the first ``extends`` link."""
    chain = [Address(store.namespace_of(type_), type_.segments)]
    seen = {chain[0]: 0}
    while True:
        parents = _parents(store, chain[-1])
        if not parents:
            return tuple(chain)
        nxt = Address(store.namespace_of(parents[0]), parents[0].segments)
        if nxt in seen:
            cycle = tuple(chain[seen[nxt]:]) + (nxt,)
            raise CycleError("extends cycle: " + " -> ".join(map(str, cycle)), cycle)
        if len(chain) > MAX_DEPTH:
            raise FolkError(f"extends chain of {type_} is deeper than {MAX_DEPTH}")
        seen[nxt] = len(chain)
        chain.append(nxt)


def extends_closure(store: Store, type_: Address) -> frozenset[Address]:
    """Every type reachable through ``extends`` links, ``type_`` included."""
    start = Address(store.namespace_of(type_), type_.segments)
    seen = {start}
    frontier = [(start, 0)]
    while frontier:
        node, depth = frontier.pop()
        for p in _parents(store, node):
            p = Address(store.namespace_of(p), p.segments)
            if p == start:
                raise CycleError(f"extends cycle through {start}", (start, node, p))
            if p in seen:
                continue
            if depth + 1 > MAX_DEPTH:
                raise FolkError(f"extends closure of {type_} is deeper than {MAX_DEPTH}")
            seen.add(p)
            frontier.append((p, depth + 1))
    return frozenset(seen)


def flatten(store: Store, type_: Address) -> dict[str, FieldDecl]:
    """Fields of ``type_`` and its ancestors; nearer definitions shadow farther ones.

    Ancestors with no quads in the store contribute nothing (open world).
    """
    out: dict[str, FieldDecl] = {}
    for t in extends_chain(store, type_):
        td = typedef_from_quads(t, store.describe(t))
        for f in td.fields:
            out.setdefault(f.name, f)
    return dict(sorted(out.items()))


# ---------------------------------------------------------------------------
# validation

_LITERAL_TYPES = {
    "@fed:string": ("string",),
    "@fed:int": ("int",),
    "@fed:decimal": ("int", "decimal"),
    "@fed:seq": ("seq",),
    "@schema:Date": ("string",),
}


def _types_of(store: Store, obj: Address) -> set[Address]:
    return {
        q.object.unpinned()
        for q in store.describe(obj)
        if q.subject.unpinned() == obj and q.predicate in (TYPE_PREDICATE, EXTENDS) and isinstance(q.object, Address)
    }


def _conforms(store: Store, value, expected) -> tuple[bool, str]:
    if isinstance(value, Literal):
        kinds = _LITERAL_TYPES.get(str(expected))
        if kinds is None or value.kind in kinds or value.kind == "elided":
            return True, value.kind
        return False, value.kind
    if isinstance(value, Address) and isinstance(expected, Address):
        declared = _types_of(store, value.unpinned())
        if not declared:
            return True, "untyped"
        for d in sorted(declared, key=str):
            try:
                if expected in extends_closure(store, d):
                    return True, str(d)
            except FolkError:
                continue
        return False, ",".join(sorted(map(str, declared)))
    return True, kind_tag(value)


def validate(store: Store, obj: Address, type_: Address) -> ValidationReport:
    load_type(store, type_)
    fields = flatten(store, type_)
    obj = Address(store.namespace_of(obj), obj.segments)
    quads = [q for q in store.describe(obj) if q.subject.unpinned() == obj]
    by_pred: dict[str, list] = {}
    for q in quads:
        by_pred.setdefault(str(q.predicate), []).append(q)
    missing = set()
    mismatched = []
    for name, f in fields.items():
        present = by_pred.get(name, [])
        if not present:
            if f.required:
                missing.add(name)
            continue
        for q in sorted(present, key=Quad.sort_key):
            ok, found = _conforms(store, q.object, f.type)
            if not ok:
                mismatched.append((name, str(f.type), found))
    extras = frozenset(
        q for q in quads if str(q.predicate) not in fields and q.predicate not in (TYPE_PREDICATE, EXTENDS)
    )
    return ValidationReport(frozenset(missing), tuple(mismatched), extras)


# ---------------------------------------------------------------------------
# translation


def _numbers(values: list) -> list:
    out = []
    for v in values:
        if not isinstance(v, Literal) or v.kind not in ("int", "decimal", "seq"):
            raise UsageError(f"non-numeric input to a numeric transform: {v}")
        out.extend(v.numbers())
    return out


def _mean(values):
    nums = _numbers(values)
    if not nums:
        raise UsageError("mean of an empty value set")
    return Literal.decimal(math.fsum(float(n) for n in nums) / len(nums))


def _sum(values):
    nums = _numbers(values)
    if all(isinstance(n, int) for n in nums):
        return Literal.integer(sum(nums))
    return Literal.decimal(sum(Decimal(n) for n in nums))


def _first(values):
    if not values:
        raise UsageError("first of an empty value set")
    v = values[0]
    if isinstance(v, Literal) and v.kind == "seq":
        return Literal.number(v.numbers()[0])
    return v


def _count(values):
    n = 0
    for v in values:
        n += len(v.numbers()) if isinstance(v, Literal) and v.kind == "seq" else 1
    return Literal.integer(n)


Transform = Callable[[list], object]
DEFAULT_TRANSFORMS: dict[Address, Transform] = {
    Address("math", ("mean",)): _mean,
    Address("math", ("sum",)): _sum,
    Address("math", ("first",)): _first,
    Address("math", ("count",)): _count,
}


def load_links(store: Store, address: Address) -> tuple[TranslationLink, ...]:
    """TranslationLinks declared in a link block such as ``<#links:lambda>``."""
    address = Address(store.namespace_of(address), address.segments)
    quads = sorted((q for q in store.describe(address) if q.subject.unpinned() == address), key=Quad.sort_key)
    sources = [q.object for q in quads if q.predicate == ITEM and isinstance(q.object, Address)]
    transform = next((q.object for q in quads if q.predicate == AGGREGATE and isinstance(q.object, Address)), None)
    note = next((q.object.value for q in quads if q.predicate == NOTE and isinstance(q.object, Literal) and q.object.kind == "string"), None)
    out = []
    for q in quads:
        rel = RELATIONS.get(str(q.predicate))
        if rel is None or not isinstance(q.object, Address):
            continue
        for src in sources:
            out.append(TranslationLink(src, rel, q.object, transform, note, address))
    return tuple(out)


def translate_quads(
    subject: Address,
    quads: Iterable[Quad],
    links: Iterable[TranslationLink],
    transforms: Mapping[Address, Transform] | None = None,
    author: str | None = None,
) -> frozenset[Quad]:
    transforms = DEFAULT_TRANSFORMS if transforms is None else transforms
    author = author if author is not None else subject.peer
    current = set(quads)
    for link in sorted(links, key=lambda l: (str(l.source), l.relation, str(l.target))):
        hits = sorted((q for q in current if q.subject == subject and q.predicate == link.source), key=Quad.sort_key)
        if link.relation == "broadMatch" or not hits:
            continue
        if link.relation == "exactMatch":
            for q in hits:
                current.discard(q)
                current.add(Quad(q.author, q.subject, link.target, q.object))
        else:
            values = [q.object for q in hits]
            if link.transform is None:
                if len(values) > 1 or (isinstance(values[0], Literal) and values[0].kind == "seq"):
                    raise UsageError(f"narrowMatch from {link.source} needs a transform for a set-valued source")
                result = values[0]
            else:
                fn = transforms.get(link.transform)
                if fn is None:
                    raise UsageError(f"unregistered transform {link.transform}")
                result = fn(values)
            current.add(Quad(author, subject, link.target, result))
        prov = link.origin if link.origin is not None else Literal.string(f"{link.relation} {link.source} {link.target}")
        current.add(Quad(author, subject, TRANSLATED_BY, prov))
    return frozenset(current)


def translate(
    store: Store,
    obj: Address,
    links: Iterable[TranslationLink],
    transforms: Mapping[Address, Transform] | None = None,
    author: str | None = None,
) -> ObjectRecord:
    """Rewrite ``obj``'s quads through translation links.

    exactMatch renames the predicate; narrowMatch feeds the source values to
    the link's transform and adds the result under the target predicate.
    Each applied link leaves one provenance quad.
    """
    obj = Address(store.namespace_of(obj), obj.segments)
    quads = [q for q in store.describe(obj) if q.subject.unpinned() == obj]
    return ObjectRecord(obj, translate_quads(obj, quads, links, transforms, author), None)


# ---------------------------------------------------------------------------
# diff & merge


def schema_diff(store: Store, a: Address, b: Address) -> SchemaDiff:
    load_type(store, a)
    load_type(store, b)
    fa, fb = flatten(store, a), flatten(store, b)
    both = fa.keys() & fb.keys()
    shared = frozenset(n for n in both if fa[n].type == fb[n].type)
    return SchemaDiff(
        a=a,
        b=b,
        shared=shared,
        only_a=frozenset(fa.keys() - fb.keys()),
        only_b=frozenset(fb.keys() - fa.keys()),
        conflicting=frozenset(both - shared),
        fields_a=fa,
        fields_b=fb,
    )


def propose_merge(
    diff: SchemaDiff,
    choices: Mapping[str, object] | None = None,
    dest: Address | None = None,
    author: str = "",
) -> tuple[TypeDef, frozenset[Quad]]:
    """Merge two flattened schemas.

    A field ends up required only if both sides require it; a field present
    on one side only is optional.  ``choices`` maps each conflicting field to
    ``"a"``, ``"b"`` or an explicit FieldDecl.
    """
    choices = dict(choices or {})
    uncovered = sorted(diff.conflicting - choices.keys())
    if uncovered:
        raise UsageError("uncovered schema conflicts: " + ", ".join(uncovered))
    fa, fb = diff.fields_a, diff.fields_b
    fields = []
    for name in sorted(fa.keys() | fb.keys()):
        if name in diff.conflicting:
            pick = choices[name]
            if isinstance(pick, FieldDecl):
                f = pick
            elif pick in ("a", "b"):
                f = fa[name] if pick == "a" else fb[name]
            else:
                raise UsageError(f"choice for {name} must be 'a', 'b' or a FieldDecl")
        else:
            f = fa.get(name) or fb[name]
        required = fa.get(name) is not None and fa[name].required and fb.get(name) is not None and fb[name].required
        if name in diff.conflicting and isinstance(choices[name], FieldDecl):
            required = f.required
        fields.append(FieldDecl(name, f.type, required, f.default, f.parameterizes, f.relation))
    dest = dest or diff.a
    author = author or dest.peer
    td = TypeDef(dest, None, tuple(fields))
    provenance = frozenset({Quad(author, dest, MERGE_OF, diff.a), Quad(author, dest, MERGE_OF, diff.b)})
    return td, provenance
