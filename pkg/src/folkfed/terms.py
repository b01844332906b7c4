"""Value types shared across the stack: addresses, versions, literals, quads.

Everything here is an immutable value with a canonical text rendering.  The
canonical rendering is what gets hashed, sorted and written to `.fld` files,
so equality of two values is equality of their canonical text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from typing import Iterable, Union

from folkfed import kernels
from folkfed.errors import DslSyntaxError

TOKEN_RE = re.compile(r"[A-Za-z0-9_-]+\Z")
TERM_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_-]*(?::[A-Za-z0-9_-]+)*\Z")
INT_RE = re.compile(r"-?[0-9]+\Z")
DECIMAL_RE = re.compile(r"-?[0-9]+\.[0-9]+\Z")
HEX64_RE = re.compile(r"[0-9a-f]{64}\Z")

# ---------------------------------------------------------------------------
# versions


@dataclass(frozen=True, order=True)
class Version:
    parts: tuple[int, ...]

    @classmethod
    def parse(cls, text: str) -> "Version":
        raw = text.strip()
        if raw[:1] in ("v", "V"):
            raw = raw[1:]
        pieces = raw.split(".")
        if not raw or not all(p.isdigit() for p in pieces):
            raise ValueError(f"not a version: {text!r}")
        return cls(tuple(int(p) for p in pieces))

    def __str__(self) -> str:
        return ".".join(str(p) for p in self.parts)


OPERATORS = ("exact", "caret", "tilde", "ge", "le", "gt", "lt")
_OP_CODE = {name: i for i, name in enumerate(OPERATORS)}
_OP_PREFIX = {
    "exact": "v",
    "caret": "^",
    "tilde": "~",
    "ge": ">=",
    "le": "<=",
    "gt": ">",
    "lt": "<",
}
# longest prefixes first so ">=" wins over ">"
_PREFIX_OPS = (
    (">=", "ge"),
    ("≥", "ge"),
    ("<=", "le"),
    ("≤", "le"),
    (">", "gt"),
    ("<", "lt"),
    ("^", "caret"),
    ("~", "tilde"),
    ("=", "exact"),
)
_PATTERN_RE = re.compile(r"(?:[0-9]+|\*)(?:\.(?:[0-9]+|\*))*\Z")


@dataclass(frozen=True)
class VersionReq:
    """A version requirement: an operator plus a dotted pattern.

    ``None`` in ``pattern`` stands for a ``*`` segment.
    """

    operator: str
    pattern: tuple[int | None, ...]

    @classmethod
    def parse(cls, text: str) -> "VersionReq":
        raw = text.strip()
        if len(raw) >= 2 and raw[0] == raw[-1] == '"':
            raw = raw[1:-1].strip()
        op = "exact"
        for prefix, name in _PREFIX_OPS:
            if raw.startswith(prefix):
                op = name
                raw = raw[len(prefix):].strip()
                break
        if raw[:1] in ("v", "V") and raw[1:2].isdigit():
            raw = raw[1:]
        if not _PATTERN_RE.match(raw):
            raise ValueError(f"not a version requirement: {text!r}")
        pattern = tuple(None if p == "*" else int(p) for p in raw.split("."))
        if all(p is None for p in pattern) and not (op == "exact" and len(pattern) == 1):
            raise ValueError(f"version requirement needs a concrete segment: {text!r}")
        return cls(op, pattern)

    @property
    def pattern_text(self) -> str:
        return ".".join("*" if p is None else str(p) for p in self.pattern)

    def __str__(self) -> str:
        if self.operator == "exact" and self.pattern == (None,):
            return "*"
        return _OP_PREFIX[self.operator] + self.pattern_text

    def matches(self, version: Version | str) -> bool:
        return match_version(version, self)


def match_version(version: Version | str, req: VersionReq | str) -> bool:
    """True iff ``version`` satisfies ``req``.

    Caret keeps every segment up to the leftmost non-zero one fixed; tilde
    keeps everything up to the penultimate pattern segment fixed.  Both also
    require ``version >= pattern`` with ``*`` read as 0.
    """
    if isinstance(version, str):
        version = Version.parse(version)
    if isinstance(req, str):
        req = VersionReq.parse(req)
    return kernels.match_version(version.parts, _OP_CODE[req.operator], req.pattern)


def looks_like_pin(piece: str) -> bool:
    if not piece:
        return False
    c = piece[0]
    if c == '"' or c.isdigit() or c in "^~<>=*≥≤":
        return True
    return c in "vV" and piece[1:2].isdigit()


# ---------------------------------------------------------------------------
# addresses


@dataclass(frozen=True)
class Address:
    """``@peer:seg:seg`` with optional version pins.

    ``pins`` holds ``(index, req)`` pairs where ``index`` is the segment the
    pin follows; ``-1`` pins the peer itself (``@python:"3.8"``).
    """

    peer: str
    segments: tuple[str, ...] = ()
    pins: tuple[tuple[int, VersionReq], ...] = ()

    def __post_init__(self):
        if not TOKEN_RE.match(self.peer):
            raise ValueError(f"bad peer token {self.peer!r}")
        for seg in self.segments:
            if not TOKEN_RE.match(seg) or looks_like_pin(seg):
                raise ValueError(f"bad segment token {seg!r}")

    @classmethod
    def parse(cls, text: str) -> "Address":
        return parse_address(text)

    def __str__(self) -> str:
        pins = dict(self.pins)
        out = ["@" + self.peer]
        if -1 in pins:
            out.append(str(pins[-1]))
        for i, seg in enumerate(self.segments):
            out.append(seg)
            if i in pins:
                out.append(str(pins[i]))
        return ":".join(out)

    def __repr__(self) -> str:
        return f"Address({str(self)!r})"

    def __lt__(self, other: "Address") -> bool:
        return str(self) < str(other)

    @property
    def pinned(self) -> bool:
        return bool(self.pins)

    def unpinned(self) -> "Address":
        return Address(self.peer, self.segments) if self.pins else self

    def child(self, *segments: str) -> "Address":
        return Address(self.peer, self.segments + tuple(segments), self.pins)

    def prefix(self, n: int) -> "Address":
        return Address(self.peer, self.segments[:n])

    def is_within(self, root: "Address") -> bool:
        """Descendant-or-self test, ignoring pins."""
        return self.peer == root.peer and self.segments[: len(root.segments)] == root.segments

    def relative_to(self, root: "Address") -> tuple[str, ...]:
        if not self.is_within(root):
            raise ValueError(f"{self} is not within {root}")
        return self.segments[len(root.segments):]

    def rebase(self, old: "Address", new: "Address") -> "Address":
        return Address(new.peer, new.segments + self.relative_to(old))

    @property
    def name(self) -> str:
        return self.segments[-1] if self.segments else self.peer


def parse_address(text: str) -> Address:
    """Parse ``@peer[:piece...]``; ``.`` and ``:`` both separate segments."""
    if not text.startswith("@"):
        raise ValueError(f"address must start with '@': {text!r}")
    pieces = _split_pieces(text[1:])
    if not pieces or not pieces[0]:
        raise ValueError(f"empty peer in {text!r}")
    head = pieces[0]
    head_parts = head.split(".")
    peer, segments = head_parts[0], list(head_parts[1:])
    pins: list[tuple[int, VersionReq]] = []
    last_was_pin = False
    for piece in pieces[1:]:
        if not piece:
            raise ValueError(f"empty segment in {text!r}")
        if looks_like_pin(piece):
            if last_was_pin:
                raise ValueError(f"two consecutive version pins in {text!r}")
            pins.append((len(segments) - 1, VersionReq.parse(piece)))
            last_was_pin = True
            continue
        parts = piece.split(".")
        if any(not p for p in parts):
            raise ValueError(f"empty segment in {text!r}")
        segments.extend(parts)
        last_was_pin = False
    if any(not s for s in segments):
        raise ValueError(f"empty segment in {text!r}")
    return Address(peer, tuple(segments), tuple(pins))


def _split_pieces(body: str) -> list[str]:
    pieces, buf, quoted = [], [], False
    for ch in body:
        if ch == '"':
            quoted = not quoted
            buf.append(ch)
        elif ch == ":" and not quoted:
            pieces.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
    if quoted:
        raise ValueError(f"unterminated quote in address @{body}")
    pieces.append("".join(buf))
    return pieces


# ---------------------------------------------------------------------------
# literals and other objects


@dataclass(frozen=True, order=True)
class Term:
    """A bare word or relative path (``int``, ``Step1:output``)."""

    text: str

    def __post_init__(self):
        if not TERM_RE.match(self.text) or looks_like_pin(self.text):
            raise ValueError(f"bad term {self.text!r}")

    def __str__(self) -> str:
        return self.text


TYPE_PREDICATE = Term("a")
EXTENDS = Term("extends")


def quote(s: str) -> str:
    out = ['"']
    for ch in s:
        if ch == '"':
            out.append('\\"')
        elif ch == "\\":
            out.append("\\\\")
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\t":
            out.append("\\t")
        elif ord(ch) < 0x20 or ord(ch) == 0x7F:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    out.append('"')
    return "".join(out)


def unquote(token: str) -> str:
    if len(token) < 2 or token[0] != '"' or token[-1] != '"':
        raise ValueError(f"not a quoted string: {token!r}")
    body, out, i = token[1:-1], [], 0
    while i < len(body):
        ch = body[i]
        if ch != "\\":
            out.append(ch)
            i += 1
            continue
        nxt = body[i + 1: i + 2]
        if nxt == "n":
            out.append("\n")
        elif nxt == "t":
            out.append("\t")
        elif nxt == "u":
            out.append(chr(int(body[i + 2: i + 6], 16)))
            i += 4
        elif nxt in ('"', "\\"):
            out.append(nxt)
        else:
            raise ValueError(f"bad escape in {token!r}")
        i += 2
    return "".join(out)


LITERAL_KINDS = ("string", "int", "decimal", "seq", "pair", "version", "elided")


@dataclass(frozen=True)
class Literal:
    kind: str
    text: str

    @classmethod
    def string(cls, value: str) -> "Literal":
        return cls("string", quote(value))

    @classmethod
    def integer(cls, value: int) -> "Literal":
        return cls("int", str(int(value)))

    @classmethod
    def decimal(cls, value) -> "Literal":
        if isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        if "e" in text or "E" in text:
            text = format(Decimal(text), "f")
        if "." not in text:
            text += ".0"
        if not DECIMAL_RE.match(text):
            raise ValueError(f"not a finite decimal: {value!r}")
        return cls("decimal", text)

    @classmethod
    def number(cls, value) -> "Literal":
        if isinstance(value, int) and not isinstance(value, bool):
            return cls.integer(value)
        return cls.decimal(value)

    @classmethod
    def seq(cls, items: Iterable) -> "Literal":
        parts = []
        for item in items:
            if item is Ellipsis:
                parts.append("...")
            elif isinstance(item, Literal) and item.kind in ("int", "decimal", "elided"):
                parts.append(item.text)
            else:
                parts.append(cls.number(item).text)
        return cls("seq", "[" + ", ".join(parts) + "]")

    @classmethod
    def pair(cls, key: str, value: str) -> "Literal":
        return cls("pair", quote(key) + "=" + quote(value))

    @classmethod
    def version(cls, req: VersionReq | str) -> "Literal":
        if isinstance(req, str):
            req = VersionReq.parse(req)
        return cls("version", str(req))

    @property
    def value(self):
        if self.kind == "string":
            return unquote(self.text)
        if self.kind == "int":
            return int(self.text)
        if self.kind == "decimal":
            return Decimal(self.text)
        if self.kind == "seq":
            inner = self.text[1:-1].strip()
            if not inner:
                return ()
            out = []
            for part in inner.split(","):
                part = part.strip()
                if part == "...":
                    out.append(Ellipsis)
                elif INT_RE.match(part):
                    out.append(int(part))
                else:
                    out.append(Decimal(part))
            return tuple(out)
        if self.kind == "pair":
            key, _, value = _split_pair(self.text)
            return (unquote(key), unquote(value))
        if self.kind == "version":
            return VersionReq.parse(self.text)
        return Ellipsis

    def numbers(self) -> list:
        """Numeric content (scalars and sequence items, elisions skipped)."""
        if self.kind in ("int", "decimal"):
            return [self.value]
        if self.kind == "seq":
            return [v for v in self.value if v is not Ellipsis]
        raise TypeError(f"{self.kind} literal is not numeric")

    def __str__(self) -> str:
        return self.text


ELIDED = Literal("elided", "...")


def _split_pair(text: str) -> tuple[str, str, str]:
    # key is a quoted string; find its closing quote
    i = 1
    while i < len(text):
        if text[i] == "\\":
            i += 2
            continue
        if text[i] == '"':
            break
        i += 1
    return text[: i + 1], "=", text[i + 2:]


@dataclass(frozen=True)
class BlobRef:
    hash: str
    length: int
    codec: str = "bin"

    def __post_init__(self):
        if not HEX64_RE.match(self.hash):
            raise ValueError(f"blob hash must be 64 lowercase hex chars: {self.hash!r}")
        if self.length < 0:
            raise ValueError("blob length must be non-negative")
        if not TOKEN_RE.match(self.codec):
            raise ValueError(f"bad codec token {self.codec!r}")

    def __str__(self) -> str:
        return f"<blob:{self.hash}:{self.length}:{self.codec}>"


@dataclass(frozen=True)
class CommitRef:
    """An address frozen at a specific commit (fork/merge/lock provenance)."""

    commit: str
    address: Address

    def __post_init__(self):
        if not HEX64_RE.match(self.commit):
            raise ValueError(f"commit id must be 64 lowercase hex chars: {self.commit!r}")

    def __str__(self) -> str:
        return f"<ref:{self.commit}:{self.address}>"


Predicate = Union[Address, Term]
Object = Union[Address, Term, Literal, BlobRef, CommitRef]

_KIND_TAGS = {
    "string": "s",
    "int": "i",
    "decimal": "d",
    "seq": "q",
    "pair": "p",
    "version": "v",
    "elided": "e",
}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}


def kind_tag(obj: Object) -> str:
    if isinstance(obj, Address):
        return "a"
    if isinstance(obj, Term):
        return "t"
    if isinstance(obj, Literal):
        return _KIND_TAGS[obj.kind]
    if isinstance(obj, BlobRef):
        return "b"
    if isinstance(obj, CommitRef):
        return "r"
    raise TypeError(f"not a quad object: {obj!r}")


def object_from_tag(tag: str, text: str) -> Object:
    """Inverse of ``(kind_tag(o), str(o))``; raises ValueError on bad input."""
    if tag == "a":
        return parse_address(text)
    if tag == "t":
        return Term(text)
    if tag == "b":
        m = re.fullmatch(r"<blob:([0-9a-f]{64}):([0-9]+):([A-Za-z0-9_-]+)>", text)
        if not m:
            raise ValueError(f"bad blob token {text!r}")
        return BlobRef(m.group(1), int(m.group(2)), m.group(3))
    if tag == "r":
        m = re.fullmatch(r"<ref:([0-9a-f]{64}):(@.+)>", text)
        if not m:
            raise ValueError(f"bad ref token {text!r}")
        return CommitRef(m.group(1), parse_address(m.group(2)))
    kind = _TAG_KINDS.get(tag)
    if kind is None:
        raise ValueError(f"unknown object tag {tag!r}")
    return parse_literal(text, kind)


def parse_literal(text: str, kind: str) -> Literal:
    """Validate ``text`` as a literal of ``kind`` and return it canonicalized."""
    if kind == "string":
        return Literal.string(unquote(text))
    if kind == "int":
        if not INT_RE.match(text):
            raise ValueError(f"bad int {text!r}")
        return Literal.integer(int(text))
    if kind == "decimal":
        if not DECIMAL_RE.match(text):
            raise ValueError(f"bad decimal {text!r}")
        try:
            Decimal(text)
        except InvalidOperation as exc:
            raise ValueError(text) from exc
        return Literal("decimal", text)
    if kind == "seq":
        if not (text.startswith("[") and text.endswith("]")):
            raise ValueError(f"bad sequence {text!r}")
        inner = text[1:-1].strip()
        items: list = []
        if inner:
            for part in inner.split(","):
                part = part.strip()
                if part == "...":
                    items.append(Ellipsis)
                elif INT_RE.match(part):
                    items.append(int(part))
                elif DECIMAL_RE.match(part):
                    items.append(Literal("decimal", part))
                else:
                    raise ValueError(f"bad sequence item {part!r}")
        return Literal.seq(items)
    if kind == "pair":
        key, _, value = _split_pair(text)
        return Literal.pair(unquote(key), unquote(value))
    if kind == "version":
        return Literal.version(VersionReq.parse(text))
    if kind == "elided":
        if text != "...":
            raise ValueError(f"bad elision {text!r}")
        return ELIDED
    raise ValueError(f"unknown literal kind {kind!r}")


def render(obj: Object | Predicate) -> str:
    return str(obj)


# ---------------------------------------------------------------------------
# quads


@dataclass(frozen=True)
class Quad:
    """An authored link: ``author`` asserts ``subject predicate object``."""

    author: str
    subject: Address
    predicate: Predicate
    object: Object

    def row(self) -> tuple[str, str, str, str, str]:
        return (
            self.author,
            str(self.subject),
            str(self.predicate),
            kind_tag(self.object),
            str(self.object),
        )

    def sort_key(self) -> bytes:
        return "\x1f".join(self.row()).encode("utf-8")

    def with_subject(self, subject: Address) -> "Quad":
        return Quad(self.author, subject, self.predicate, self.object)

    def with_author(self, author: str) -> "Quad":
        return Quad(author, self.subject, self.predicate, self.object)

    @classmethod
    def from_row(cls, row) -> "Quad":
        author, subject, predicate, tag, obj = row
        pred: Predicate = parse_address(predicate) if predicate.startswith("@") else Term(predicate)
        return cls(author, parse_address(subject), pred, object_from_tag(tag, obj))


QuadSet = frozenset


@dataclass(frozen=True)
class Pattern:
    """Quad pattern; ``None`` fields are unbound."""

    author: str | None = None
    subject: Address | None = None
    predicate: Predicate | None = None
    object: Object | None = None

    def key(self) -> tuple:
        return (
            self.author,
            None if self.subject is None else str(self.subject),
            None if self.predicate is None else str(self.predicate),
            None if self.object is None else (kind_tag(self.object), str(self.object)),
        )

    def matches(self, quad: Quad) -> bool:
        if self.author is not None and quad.author != self.author:
            return False
        if self.subject is not None and quad.subject != self.subject:
            return False
        if self.predicate is not None and str(quad.predicate) != str(self.predicate):
            return False
        if self.object is not None and (
            kind_tag(quad.object) != kind_tag(self.object) or str(quad.object) != str(self.object)
        ):
            return False
        return True


def as_predicate(text: str) -> Predicate:
    return parse_address(text) if text.startswith("@") else Term(text)


def checked_address(text: str, line: int = 0, col: int = 0) -> Address:
    try:
        return parse_address(text)
    except ValueError as exc:
        raise DslSyntaxError(str(exc), line, col) from None
