"""Line-oriented parser for `.fld` link documents.

The grammar is indentation-scoped.  A document is a sequence of directives
(``@base``, ``#prefix``), comments and declarations; a declaration header
``<#name>`` or ``<@peer:path>`` is followed by statement lines whose nesting
is given by indentation.  Blank lines carry no meaning.

Every statement line has one of three shapes:

* ``token``                       a bare object or a predicate with children
* ``predicate object``            a plain link
* ``predicate name object``       a named child node with a type
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Union

from folkfed.errors import DslSyntaxError
from folkfed.terms import (
    DECIMAL_RE,
    ELIDED,
    INT_RE,
    TERM_RE,
    TOKEN_RE,
    Address,
    BlobRef,
    CommitRef,
    Literal,
    Term,
    VersionReq,
    looks_like_pin,
    object_from_tag,
    parse_address,
    parse_literal,
    unquote,
)

_PREFIX_RE = re.compile(r"#prefix\s+(\S+)\s+(\S+)\s*\Z")
_BARE_PAIR_RE = re.compile(r'([A-Za-z0-9_-]+)=(".*")\Z', re.S)


@dataclass(frozen=True)
class Dotted:
    """A leading-dot predicate, expanded against its context at resolve time."""

    path: tuple[str, ...]

    def __str__(self) -> str:
        return "." + ":".join(self.path)


@dataclass(frozen=True)
class RelRef:
    """``<#a:b>``: a path relative to the base in effect."""

    path: tuple[str, ...]

    def __str__(self) -> str:
        return "<#" + ":".join(self.path) + ">"


Token = Union[Address, Term, Literal, BlobRef, CommitRef, RelRef, Dotted]
Context = Union[Address, RelRef, None]


@dataclass(frozen=True)
class Statement:
    predicate: Token
    objects: tuple[Token, ...] = ()
    children: tuple["Statement", ...] = ()
    line: int = 0
    column: int = 0
    # expansion context for a dotted predicate, filled in by the parser
    context: Context = None


@dataclass(frozen=True)
class ObjectDecl:
    name: Union[RelRef, Address]
    statements: tuple[Statement, ...] = ()
    base: Address | None = None
    line: int = 0


@dataclass(frozen=True)
class DslDocument:
    base: Address | None = None
    prefixes: Mapping[str, Address] = field(default_factory=lambda: MappingProxyType({}))
    decls: tuple[ObjectDecl, ...] = ()
    # line each prefix was declared on; a prefix only applies below it
    prefix_lines: Mapping[str, int] = field(default_factory=lambda: MappingProxyType({}))


# ---------------------------------------------------------------------------
# lexing


def _quote_end(s: str, i: int, line: int, col0: int) -> int:
    """Index just past the string literal opening at ``s[i]``."""
    j = i + 1
    while j < len(s):
        if s[j] == "\\":
            j += 2
            continue
        if s[j] == '"':
            return j + 1
        j += 1
    raise DslSyntaxError("unterminated string", line, col0 + i)


def _open_quote(s: str) -> bool:
    inside = False
    j = 0
    while j < len(s):
        ch = s[j]
        if inside and ch == "\\":
            j += 2
            continue
        if ch == '"':
            inside = not inside
        j += 1
    return inside


def _split_tokens(s: str, line: int, col0: int) -> list[tuple[str, int]]:
    out: list[tuple[str, int]] = []
    i = 0
    n = len(s)
    while i < n:
        if s[i] in " \t":
            i += 1
            continue
        start = i
        c = s[i]
        if c == '"':
            i = _quote_end(s, i, line, col0)
            if s[i: i + 2] == '="':
                i = _quote_end(s, i + 1, line, col0)
        elif c == "[":
            close = s.find("]", i)
            if close < 0:
                raise DslSyntaxError("unterminated sequence", line, col0 + i)
            i = close + 1
        elif c == "<":
            j = i + 1
            while True:
                j = s.find(">", j)
                if j < 0:
                    raise DslSyntaxError("unterminated '<' reference", line, col0 + i)
                if j + 1 == n or s[j + 1] in " \t":
                    break
                j += 1
            i = j + 1
        else:
            while i < n and s[i] not in " \t":
                if s[i] == '"':
                    i = _quote_end(s, i, line, col0)
                else:
                    i += 1
        if i < n and s[i] not in " \t":
            raise DslSyntaxError("missing space between tokens", line, col0 + i + 1)
        out.append((s[start:i], col0 + start + 1))
    return out


def _path(text: str, line: int, col: int) -> tuple[str, ...]:
    parts = tuple(re.split(r"[:.]", text))
    for part in parts:
        if not TOKEN_RE.match(part) or looks_like_pin(part):
            raise DslSyntaxError(f"bad path segment {part!r}", line, col)
    return parts


def classify(text: str, line: int = 0, col: int = 0) -> Token:
    """Turn one lexed token into a typed value."""
    try:
        return _classify(text, line, col)
    except DslSyntaxError:
        raise
    except ValueError as exc:
        raise DslSyntaxError(str(exc), line, col) from None


def _classify(text: str, line: int, col: int) -> Token:
    c = text[0]
    if c == '"':
        end = _quote_end(text, 0, line, col)
        if end == len(text):
            return Literal.string(unquote(text))
        if text[end] == "=" and end + 1 < len(text):
            return Literal.pair(unquote(text[:end]), unquote(text[end + 1:]))
        raise DslSyntaxError(f"unexpected text after string: {text!r}", line, col)
    if c == "[":
        return parse_literal(text, "seq")
    if text == "...":
        return ELIDED
    if c == "<":
        if text.startswith("<blob:"):
            return object_from_tag("b", text)
        if text.startswith("<ref:"):
            return object_from_tag("r", text)
        if text.startswith("<#"):
            return RelRef(_path(text[2:-1], line, col))
        if text.startswith("<@"):
            return parse_address(text[1:-1].replace("#", ":", 1))
        raise DslSyntaxError(f"unknown bracketed token {text!r}", line, col)
    if c == "@":
        return parse_address(text)
    if c == "." and len(text) > 1 and text[1] != ".":
        return Dotted(_path(text[1:], line, col))
    m = _BARE_PAIR_RE.match(text)
    if m:
        return Literal.pair(m.group(1), unquote(m.group(2)))
    if INT_RE.match(text):
        return Literal.integer(int(text))
    if DECIMAL_RE.match(text):
        return Literal("decimal", text)
    if looks_like_pin(text):
        return Literal.version(VersionReq.parse(text))
    if TERM_RE.match(text):
        return Term(text)
    raise DslSyntaxError(f"unrecognized token {text!r}", line, col)


# ---------------------------------------------------------------------------
# block structure


@dataclass
class _Line:
    indent: int
    tokens: list[tuple[str, int]]
    number: int
    children: list["_Line"] = field(default_factory=list)


def _logical_lines(text: str):
    """Yield (line_number, raw_line); lines with an open string absorb the next."""
    physical = text.split("\n")
    i = 0
    while i < len(physical):
        start = i
        line = physical[i].rstrip("\r")
        i += 1
        if line.lstrip().startswith("#"):
            yield start + 1, line
            continue
        while _open_quote(line) and i < len(physical):
            line = line + "\n" + physical[i].rstrip("\r").strip()
            i += 1
        yield start + 1, line


def _is_header(stripped: str) -> bool:
    return stripped.startswith("<#") or stripped.startswith("<@")


def parse_document(text: str) -> DslDocument:
    """Parse `.fld` text into a document tree; raises DslSyntaxError."""
    prefixes: dict[str, Address] = {}
    prefix_lines: dict[str, int] = {}
    doc_base: Address | None = None
    base: Address | None = None
    decls: list[ObjectDecl] = []
    current: tuple[Union[RelRef, Address], Address | None, int] | None = None
    body: list[_Line] = []

    def close():
        if current is not None:
            name, decl_base, number = current
            decls.append(ObjectDecl(name, _build(body), decl_base, number))

    for number, raw in _logical_lines(text):
        expanded = raw.replace("\t", "    ")
        stripped = expanded.strip()
        if not stripped:
            continue
        indent = len(expanded) - len(expanded.lstrip(" "))
        if stripped.startswith("#"):
            if indent == 0 and stripped.startswith("#prefix"):
                m = _PREFIX_RE.match(stripped)
                if not m:
                    raise DslSyntaxError("malformed #prefix directive", number, 1)
                alias, target = m.groups()
                if not TOKEN_RE.match(alias):
                    raise DslSyntaxError(f"bad prefix alias {alias!r}", number, 9)
                if alias in prefixes:
                    raise DslSyntaxError(f"duplicate prefix alias {alias!r}", number, 9)
                try:
                    prefixes[alias] = parse_address(target)
                except ValueError as exc:
                    raise DslSyntaxError(str(exc), number, 10 + len(alias)) from None
                prefix_lines[alias] = number
            continue
        if indent == 0 and (stripped == "@base" or stripped.startswith("@base ") or stripped.startswith("@base\t")):
            target = stripped[5:].strip()
            if not target:
                raise DslSyntaxError("@base needs an address", number, 1)
            if target.startswith("<") and target.endswith(">"):
                target = target[1:-1]
            try:
                base = parse_address(target)
            except ValueError as exc:
                raise DslSyntaxError(str(exc), number, 7) from None
            if doc_base is None:
                doc_base = base
            continue
        if indent == 0 and _is_header(stripped):
            toks = _split_tokens(stripped, number, 0)
            if len(toks) != 1:
                raise DslSyntaxError("unexpected text after declaration header", number, toks[1][1])
            name = classify(toks[0][0], number, 1)
            if not isinstance(name, (RelRef, Address)):
                raise DslSyntaxError("bad declaration header", number, 1)
            close()
            current = (name, base, number)
            body = []
            continue
        if current is None:
            raise DslSyntaxError("statement outside a declaration", number, indent + 1)
        body.append(_Line(indent, _split_tokens(expanded[indent:], number, indent), number))
    close()
    return DslDocument(
        base=doc_base,
        prefixes=MappingProxyType(prefixes),
        decls=tuple(decls),
        prefix_lines=MappingProxyType(prefix_lines),
    )


def _build(lines: list[_Line]) -> tuple[Statement, ...]:
    if not lines:
        return ()
    root = _Line(-1, [], 0)
    stack = [root]
    for ln in lines:
        while stack[-1].indent >= ln.indent:
            stack.pop()
            if not stack:
                raise DslSyntaxError("dedent past the declaration", ln.number, ln.indent + 1)
        parent = stack[-1]
        if parent.children and parent.children[0].indent != ln.indent:
            raise DslSyntaxError("inconsistent indentation", ln.number, ln.indent + 1)
        parent.children.append(ln)
        stack.append(ln)
    return _statements(root.children, None)


def _provider(st: Statement) -> Context:
    """The address a statement offers as context to what follows it."""
    if isinstance(st.predicate, Dotted):
        return None
    if not st.objects:
        tok = st.predicate
    else:
        tok = st.objects[-1]
    return tok if isinstance(tok, (Address, RelRef)) else None


def _statements(lines: list[_Line], outer: Context) -> tuple[Statement, ...]:
    out: list[Statement] = []
    last: Context = None
    for ln in lines:
        toks = [classify(t, ln.number, c) for t, c in ln.tokens]
        pred, objects = toks[0], tuple(toks[1:])
        col = ln.tokens[0][1]
        if len(objects) > 2:
            raise DslSyntaxError("too many objects on one line", ln.number, ln.tokens[3][1])
        if objects and not isinstance(pred, (Address, Term, Dotted)):
            raise DslSyntaxError(f"{ln.tokens[0][0]!r} cannot be a predicate", ln.number, col)
        for tok, (raw, c) in zip(objects, ln.tokens[1:]):
            if isinstance(tok, Dotted):
                raise DslSyntaxError(f"dotted token {raw!r} in object position", ln.number, c)
        if len(objects) == 2 and not (isinstance(objects[0], Term) and ":" not in objects[0].text):
            raise DslSyntaxError("a node name must be a bare word", ln.number, ln.tokens[1][1])
        if not objects and not ln.children and isinstance(pred, Dotted):
            raise DslSyntaxError("dotted predicate needs an object", ln.number, col)
        if not objects and ln.children and not isinstance(pred, (Address, Term, Dotted)):
            raise DslSyntaxError(f"{ln.tokens[0][0]!r} cannot carry children", ln.number, col)
        here = last if last is not None else outer
        context: Context = None
        if isinstance(pred, Dotted):
            if here is None:
                raise DslSyntaxError("dot-predicate without context", ln.number, col)
            context = here
        probe = Statement(pred, objects, (), ln.number, col, context)
        provided = _provider(probe)
        children = _statements(ln.children, provided if provided is not None else here) if ln.children else ()
        out.append(Statement(pred, objects, children, ln.number, col, context))
        if provided is not None:
            last = provided
    return tuple(out)
