"""The link language: parsing, resolution, canonical text and wikilinks."""

from __future__ import annotations

from folkfed.dsl.parser import (
    Dotted,
    DslDocument,
    ObjectDecl,
    RelRef,
    Statement,
    classify,
    parse_document,
)
from folkfed.dsl.resolver import resolve
from folkfed.dsl.serializer import serialize
from folkfed.dsl.wikilinks import extract_wikilinks, prefixes_in
from folkfed.errors import DslSyntaxError
from folkfed.terms import Address, Version, VersionReq, match_version
from folkfed.terms import parse_address as _parse_address


def parse_address(token: str) -> Address:
    """Parse an address token, reporting problems as DslSyntaxError."""
    try:
        return _parse_address(token)
    except ValueError as exc:
        raise DslSyntaxError(str(exc)) from None


def parse_text(text: str, base=None, prefixes=None, handles=None, strict=False):
    """parse_document then resolve, in one call."""
    return resolve(parse_document(text), base, prefixes, handles, strict)


__all__ = [
    "Dotted",
    "DslDocument",
    "ObjectDecl",
    "RelRef",
    "Statement",
    "Version",
    "VersionReq",
    "classify",
    "extract_wikilinks",
    "match_version",
    "parse_address",
    "parse_document",
    "parse_text",
    "prefixes_in",
    "resolve",
    "serialize",
]
