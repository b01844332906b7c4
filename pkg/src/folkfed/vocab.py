"""Reserved vocabulary.

These addresses carry protocol meaning; every other predicate is
folksonomic and passed through untouched.
"""

from __future__ import annotations

from folkfed.terms import EXTENDS, TYPE_PREDICATE, Address

A = TYPE_PREDICATE
EXTENDS = EXTENDS


def _fed(*segments: str) -> Address:
    return Address("fed", segments)


ITEM = _fed("item")
VERSION = _fed("version")
FORK_OF = _fed("forkOf")
MERGE_OF = _fed("mergeOf")
MENTIONS = _fed("mentions")
TRANSLATED_BY = _fed("translatedBy")
DERIVED_FROM = _fed("derivedFrom")
CONTENT = _fed("content")
OUTPUT = _fed("output")
GENERATED_BY = _fed("generatedBy")
LOCK_HASH = _fed("lockHash")

# permissions vocabulary
PERMISSIONS = _fed("Permissions")
FEDERATION = _fed("Federation")
SHARE_DATA = _fed("shareData")
SHARE_METADATA = _fed("shareMetadata")
SHARE_ENCRYPTED = _fed("shareEncrypted")
SHARE_NONE = _fed("shareNone")

# schema translation vocabulary
EXACT_MATCH = Address("skos", ("exactMatch",))
NARROW_MATCH = Address("skos", ("narrowMatch",))
BROAD_MATCH = Address("skos", ("broadMatch",))
AGGREGATE = Address("translate", ("aggregate",))
