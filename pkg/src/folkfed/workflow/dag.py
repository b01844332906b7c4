"""Typed step graphs and variant selection."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Mapping

from folkfed.errors import CycleError, NotFound, UsageError
from folkfed.linkstore import Store
from folkfed.schema import TranslationLink, load_links
from folkfed.terms import Address
from folkfed.vocab import BROAD_MATCH, EXACT_MATCH, EXTENDS, NARROW_MATCH
from folkfed.workflow.model import AnalysisNode, Workflow, load_node

_RELATION_PREDICATES = {str(EXACT_MATCH), str(NARROW_MATCH), str(BROAD_MATCH)}


@dataclass(frozen=True)
class Edge:
    producer: str
    consumer: str
    output_types: tuple[Address, ...]
    input_types: tuple[Address, ...]
    translation: tuple[Address, ...] | None = None


@dataclass(frozen=True)
class Dag:
    workflow: Address
    order: tuple[str, ...]
    nodes: Mapping[str, AnalysisNode]
    edges: tuple[Edge, ...]

    def parents(self, step: str) -> tuple[str, ...]:
        return tuple(e.producer for e in self.edges if e.consumer == step)


def _norm(store: Store, a: Address) -> Address:
    return Address(store.namespace_of(a), a.segments)


def select_variant(store: Store, base: Address, want_input: Address, want_output: Address) -> Address:
    """``base`` if its types fit, else the smallest-addressed extension that does."""
    examined = []

    def fits(node: AnalysisNode) -> bool:
        return want_input in node.input_types and want_output in node.output_types

    root = load_node(store, base)
    examined.append(root.address)
    if fits(root):
        return root.address
    candidates = sorted(
        {q.subject.unpinned() for q in store.all_visible()
         if q.predicate == EXTENDS and isinstance(q.object, Address) and _norm(store, q.object) == root.address},
        key=str,
    )
    for c in candidates:
        examined.append(c)
        try:
            node = load_node(store, c)
        except (NotFound, UsageError):
            continue
        if fits(node):
            return node.address
    raise NotFound(
        f"no variant of {base} takes {want_input} to {want_output}; examined "
        + ", ".join(str(e) for e in examined)
    )


def translation_links(store: Store) -> tuple[TranslationLink, ...]:
    blocks = sorted({q.subject.unpinned() for q in store.all_visible() if str(q.predicate) in _RELATION_PREDICATES}, key=str)
    out: list[TranslationLink] = []
    for b in blocks:
        out.extend(load_links(store, b))
    return tuple(out)


def translation_path(
    links: Iterable[TranslationLink], sources: Iterable[Address], targets: Iterable[Address]
) -> tuple[Address, ...] | None:
    """Shortest chain of types from any source to any target, or None."""
    graph: dict[Address, set[Address]] = {}
    for link in links:
        graph.setdefault(link.source, set()).add(link.target)
        if link.relation == "exactMatch":
            graph.setdefault(link.target, set()).add(link.source)
    goal = set(targets)
    starts = sorted(set(sources), key=str)
    prev: dict[Address, Address | None] = {s: None for s in starts}
    queue = deque(starts)
    while queue:
        cur = queue.popleft()
        if cur in goal:
            path = [cur]
            while prev[path[-1]] is not None:
                path.append(prev[path[-1]])
            return tuple(reversed(path))
        for nxt in sorted(graph.get(cur, ()), key=str):
            if nxt not in prev:
                prev[nxt] = cur
                queue.append(nxt)
    return None


def find_cycle(steps: Iterable[str], deps: Mapping[str, Iterable[str]]) -> tuple[str, ...] | None:
    """Some cycle through ``deps`` (step -> producers), or None."""
    colour: dict[str, int] = {}
    stack: list[str] = []

    def visit(s: str) -> tuple[str, ...] | None:
        colour[s] = 1
        stack.append(s)
        for p in sorted(deps.get(s, ())):
            if colour.get(p) == 1:
                return tuple(stack[stack.index(p):]) + (p,)
            if p not in colour:
                found = visit(p)
                if found:
                    return found
        stack.pop()
        colour[s] = 2
        return None

    for s in sorted(steps):
        if s not in colour:
            found = visit(s)
            if found:
                return found
    return None


def topo_order(steps: Iterable[str], deps: Mapping[str, Iterable[str]]) -> tuple[str, ...]:
    steps = sorted(steps)
    indeg = {s: len(set(deps.get(s, ()))) for s in steps}
    users: dict[str, list[str]] = {s: [] for s in steps}
    for s in steps:
        for p in set(deps.get(s, ())):
            users[p].append(s)
    ready = sorted(s for s in steps if indeg[s] == 0)
    order = []
    while ready:
        s = ready.pop(0)
        order.append(s)
        for u in sorted(users[s]):
            indeg[u] -= 1
            if indeg[u] == 0:
                ready.append(u)
                ready.sort()
    if len(order) != len(steps):
        cycle = find_cycle(steps, deps) or ()
        raise CycleError("workflow steps form a cycle: " + " -> ".join(cycle), cycle)
    return tuple(order)


def build_dag(store: Store, workflow: Workflow) -> Dag:
    """Load every step's node, type-check each wire and order the steps.

    A wire passes when the producer and consumer share a type, when either
    side declares no types, or when translation links connect them.
    """
    nodes = {s.name: load_node(store, s.node) for s in workflow.steps}
    deps = {s.name: [i for i in s.inputs if i != "input"] for s in workflow.steps}
    order = topo_order(nodes, deps)
    links = None
    edges = []
    for s in workflow.steps:
        for producer in sorted(set(deps[s.name])):
            out_t, in_t = nodes[producer].output_types, nodes[s.name].input_types
            path = None
            if out_t and in_t and not set(out_t) & set(in_t):
                if links is None:
                    links = translation_links(store)
                path = translation_path(links, out_t, in_t)
                if path is None:
                    raise UsageError(
                        f"type mismatch on {producer} -> {s.name}: "
                        f"{', '.join(map(str, out_t))} does not reach {', '.join(map(str, in_t))}"
                    )
            edges.append(Edge(producer, s.name, out_t, in_t, path))
    return Dag(workflow.address, order, MappingProxyType(nodes), tuple(sorted(edges, key=lambda e: (e.producer, e.consumer))))
