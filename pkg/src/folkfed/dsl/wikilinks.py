"""Typed ``[[predicate :: object]]`` links embedded in free text."""

from __future__ import annotations

import re
from typing import Mapping

from folkfed.terms import Address, Quad, Term, parse_address
from folkfed.vocab import MENTIONS

_LINK_RE = re.compile(r"\[\[([^\[\]\n]+?)\]\]")
_DIRECTIVE_RE = re.compile(r"^#prefix[ \t]+(\S+)[ \t]+(@\S+)[ \t]*$", re.M)


def prefixes_in(text: str) -> dict[str, Address]:
    """Collect ``#prefix alias @target`` lines from a post."""
    out: dict[str, Address] = {}
    for alias, target in _DIRECTIVE_RE.findall(text):
        try:
            out[alias] = parse_address(target)
        except ValueError:
            continue
    return out


def _term(text: str, prefixes: Mapping[str, Address], subject: Address):
    text = text.strip()
    if not text:
        return None
    try:
        if text.startswith("@"):
            return parse_address(text)
        if text.startswith(":"):
            # section of the document being written
            return subject.unpinned().child(*text[1:].split(":"))
        head, _, rest = text.partition(":")
        if rest and head in prefixes:
            return prefixes[head].child(*rest.split(":"))
        return Term(text.replace(" ", "_"))
    except ValueError:
        return None


def extract_wikilinks(
    text: str,
    prefixes: Mapping[str, Address] | None = None,
    author: str = "",
    subject: Address | None = None,
) -> frozenset[Quad]:
    """Quads for every well-formed wikilink in ``text``.

    A bare ``[[object]]`` uses the reserved mentions predicate.  Links whose
    parts do not parse are left alone as plain text.
    """
    if subject is None:
        raise ValueError("extract_wikilinks needs the subject the text belongs to")
    prefixes = prefixes or {}
    quads = set()
    for m in _LINK_RE.finditer(text):
        body = m.group(1)
        if "::" in body:
            p_text, o_text = body.split("::", 1)
            pred = _term(p_text, prefixes, subject)
            if pred is None:
                continue
        else:
            pred, o_text = MENTIONS, body
        obj = _term(o_text, prefixes, subject)
        if obj is None:
            continue
        quads.add(Quad(author, subject, pred, obj))
    return frozenset(quads)
