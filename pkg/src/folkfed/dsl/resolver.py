"""Turn a parsed document into authored quads."""

from __future__ import annotations

from typing import Mapping

from folkfed.dsl.parser import Dotted, DslDocument, ObjectDecl, RelRef, Statement, Token
from folkfed.errors import DslSyntaxError, NotFound, UsageError
from folkfed.identity import HandleTable, is_peer_id
from folkfed.terms import TYPE_PREDICATE, Address, Quad, Term, parse_address
from folkfed.vocab import ITEM


class _Resolver:
    def __init__(
        self,
        doc: DslDocument,
        base: Address | None,
        prefixes: Mapping[str, Address],
        handles: HandleTable | None,
        strict: bool,
    ):
        self.doc = doc
        self.default_base = base
        self.extra_prefixes = dict(prefixes)
        self.handles = handles
        self.strict = strict
        self.quads: set[Quad] = set()
        self.used: dict[Address, set[str]] = {}

    # -- names -------------------------------------------------------------

    def peer(self, alias: str, line: int) -> str:
        if self.handles is not None and alias in self.handles:
            return self.handles.get(alias)
        if self.strict and not is_peer_id(alias) and not self._is_vocab(alias):
            raise DslSyntaxError(f"unbound alias @{alias}", line, 1)
        return alias

    def _is_vocab(self, alias: str) -> bool:
        return any(p.peer == alias for p in self.doc.prefixes.values()) or any(
            p.peer == alias for p in self.extra_prefixes.values()
        )

    def address(self, addr: Address, line: int) -> Address:
        peer = self.peer(addr.peer, line)
        return addr if peer == addr.peer else Address(peer, addr.segments, addr.pins)

    def prefix_for(self, alias: str, line: int) -> Address | None:
        if alias in self.doc.prefixes and self.doc.prefix_lines.get(alias, 0) < line:
            return self.doc.prefixes[alias]
        return self.extra_prefixes.get(alias)

    def value(self, tok: Token, base: Address, line: int):
        if isinstance(tok, RelRef):
            return self.address(base.unpinned().child(*tok.path), line)
        if isinstance(tok, Address):
            return self.address(tok, line)
        if isinstance(tok, Term) and ":" in tok.text:
            head, *rest = tok.text.split(":")
            target = self.prefix_for(head, line)
            if target is not None:
                return self.address(target.child(*rest), line)
        return tok

    def node(self, parent: Address, name: str, auto: bool) -> Address:
        taken = self.used.setdefault(parent, set())
        if auto:
            candidate, k = name, 1
            while candidate in taken:
                k += 1
                candidate = f"{name}-{k}"
            name = candidate
        taken.add(name)
        return parent.child(name)

    # -- statements ------------------------------------------------------

    def decl(self, decl: ObjectDecl) -> None:
        base = decl.base or self.default_base
        if base is None:
            raise UsageError(f"declaration on line {decl.line} has no base; pass one explicitly")
        if self.handles is not None and not is_peer_id(base.peer):
            try:
                author = self.handles.bindings[base.peer]
            except KeyError:
                raise NotFound(f"unresolvable handle @{base.peer}") from None
        else:
            author = base.peer
        subject = self.value(decl.name, base, decl.line)
        self.block(decl.statements, subject, author, base)

    def emit(self, author: str, subject: Address, predicate, obj) -> None:
        self.quads.add(Quad(author, subject, predicate, obj))

    def predicate(self, st: Statement, base: Address):
        pred = st.predicate
        if isinstance(pred, Dotted):
            ctx = self.value(st.context, base, st.line).unpinned()
            return ctx.child(*pred.path)
        pred = self.value(pred, base, st.line)
        if not isinstance(pred, (Address, Term)):
            raise DslSyntaxError(f"{pred} cannot be a predicate", st.line, st.column)
        return pred

    def block(self, statements, subject: Address, author: str, base: Address) -> None:
        for st in statements:
            self.statement(st, subject, author, base)

    def statement(self, st: Statement, subject: Address, author: str, base: Address) -> None:
        if not st.objects:
            if not st.children:
                self.emit(author, subject, ITEM, self.value(st.predicate, base, st.line))
                return
            pred = self.predicate(st, base)
            if all(_pure_object(c) for c in st.children):
                for child in st.children:
                    self.emit(author, subject, pred, self.value(child.predicate, base, child.line))
                return
            local = st.predicate.path[-1] if isinstance(st.predicate, Dotted) else _local_name(pred)
            node = self.node(subject, local, auto=True)
            self.emit(author, subject, pred, node)
            self.block(st.children, node, author, base)
            return
        pred = self.predicate(st, base)
        if len(st.objects) == 1:
            self.emit(author, subject, pred, self.value(st.objects[0], base, st.line))
            self.block(st.children, subject, author, base)
            return
        name, kind = st.objects
        node = self.node(subject, name.text, auto=False)
        self.emit(author, subject, pred, node)
        self.emit(author, node, TYPE_PREDICATE, self.value(kind, base, st.line))
        self.block(st.children, node, author, base)


def _pure_object(st: Statement) -> bool:
    return not st.objects and not st.children and not isinstance(st.predicate, Dotted)


def _local_name(pred) -> str:
    if isinstance(pred, Address):
        return pred.name
    return pred.text.split(":")[-1]


def resolve(
    doc: DslDocument,
    base: Address | str | None = None,
    prefixes: Mapping[str, Address] | None = None,
    handles: HandleTable | None = None,
    strict: bool = False,
) -> frozenset[Quad]:
    """Resolve ``doc`` into quads authored by the peer of the base in effect.

    An in-document ``@base`` wins over ``base`` for the declarations after it.
    With ``handles``, every aliased peer bound in the table is rewritten to
    its PeerId and the author alias must be bound.  ``strict`` additionally
    rejects any address whose peer is neither a PeerId, a bound alias, nor
    the peer of a declared prefix.
    """
    if isinstance(base, str):
        base = parse_address(base)
    r = _Resolver(doc, base, prefixes or {}, handles, strict)
    for decl in doc.decls:
        r.decl(decl)
    return frozenset(r.quads)
