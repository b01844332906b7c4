"""Canonical `.fld` text for a quad set."""

from __future__ import annotations

from collections import defaultdict
from typing import Iterable

from folkfed.terms import Quad, kind_tag


def _statement_key(q: Quad) -> tuple[str, str, str]:
    return (str(q.predicate), str(q.object), kind_tag(q.object))


def serialize(quads: Iterable[Quad]) -> str:
    """Render quads as flat declarations grouped by author then subject.

    Only the ``predicate object`` line form is emitted, so the output reparses
    to exactly the same set regardless of how the quads were first written.
    """
    by_author: dict[str, dict[str, list[Quad]]] = defaultdict(lambda: defaultdict(list))
    for q in quads:
        by_author[q.author][str(q.subject)].append(q)
    if not by_author:
        return ""
    out: list[str] = []
    for author in sorted(by_author):
        if out:
            out.append("")
        out.append(f"@base @{author}")
        subjects = by_author[author]
        for subject in sorted(subjects):
            out.append("")
            out.append(f"<{subject}>")
            for q in sorted(subjects[subject], key=_statement_key):
                out.append(f"  {q.predicate} {q.object}")
    return "\n".join(out) + "\n"
