"""Dependency resolution against a flat package registry.

Each package resolves independently to the greatest available version that
satisfies every requirement naming it.  There is no backtracking: packages
do not constrain each other, so the per-package maximum is the answer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

from folkfed.errors import Conflict, NotFound, UsageError
from folkfed.terms import Address, Version, VersionReq, match_version
from folkfed.workflow.model import AnalysisNode, DepSpec

Registry = Mapping[tuple[str, str], tuple[Version, ...]]


class DependencyConflict(Conflict):
    """No available version satisfies every requirement on a package."""

    def __init__(self, package: tuple[str, str], constraints: list[tuple[VersionReq, Address]]):
        self.package = package
        self.constraints = constraints
        listed = "; ".join(f"{req} from {src}" for req, src in constraints)
        super().__init__(f"no version of {package[0]}:{package[1]} satisfies all of: {listed}")


@dataclass(frozen=True)
class ResolvedDep:
    ecosystem: str
    package: str
    version: Version
    sources: tuple[str, ...]
    qualifiers: tuple[str, ...] = ()


def parse_registry(text: str) -> dict[tuple[str, str], tuple[Version, ...]]:
    """Lines of ``ecosystem package version``; ``#`` starts a comment."""
    reg: dict[tuple[str, str], set[Version]] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise UsageError(f"registry line {n}: expected 'ecosystem package version'")
        eco, pkg, ver = parts
        try:
            reg.setdefault((eco.lstrip("@"), pkg), set()).add(Version.parse(ver))
        except ValueError as exc:
            raise UsageError(f"registry line {n}: {exc}") from None
    return {k: tuple(sorted(v)) for k, v in sorted(reg.items())}


def resolve_specs(registry: Registry, specs: Iterable[tuple[DepSpec, Address]]) -> dict[tuple[str, str], ResolvedDep]:
    """Resolve ``(spec, source node)`` pairs; raises NotFound or DependencyConflict."""
    grouped: dict[tuple[str, str], list[tuple[DepSpec, Address]]] = {}
    for spec, src in specs:
        grouped.setdefault(spec.key, []).append((spec, src))
    out = {}
    for key in sorted(grouped):
        entries = grouped[key]
        if key not in registry:
            raise NotFound(f"unknown package {key[0]}:{key[1]} (needed by {entries[0][1]})")
        ok = [v for v in registry[key] if all(match_version(v, s.req) for s, _ in entries)]
        if not ok:
            raise DependencyConflict(key, sorted(((s.req, src) for s, src in entries), key=lambda p: (str(p[1]), str(p[0]))))
        sources = sorted({src for s, _ in entries for src in s.extra_sources})
        quals = sorted({qual for s, _ in entries for qual in s.qualifiers})
        out[key] = ResolvedDep(key[0], key[1], max(ok), tuple(sources), tuple(quals))
    return out


def resolve_deps(registry: Registry, nodes: Iterable[AnalysisNode]) -> dict[tuple[str, str], ResolvedDep]:
    return resolve_specs(registry, ((d, n.address) for n in nodes for d in n.depends_on))
