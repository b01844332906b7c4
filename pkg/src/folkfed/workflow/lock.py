"""Freezing projects into lockfiles.

A lockfile is a set of quads under ``<project>:lock`` plus a content-hash
header line.  Everything a run needs is exact: node versions, resolved
dependency versions, fully valued parameters and dataset snapshot commits.
"""

from __future__ import annotations

import hashlib
import itertools
import random
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from folkfed.errors import IntegrityError, NotFound, UsageError
from folkfed.linkstore import Store
from folkfed.linkstore.canonical import quads_hash
from folkfed.terms import Address, CommitRef, Literal, Object, Quad, Term, Version, VersionReq
from folkfed.vocab import A, ITEM
from folkfed.workflow.dag import build_dag
from folkfed.workflow.deps import Registry, ResolvedDep, resolve_specs
from folkfed.workflow.model import (
    LOCKFILE_TYPE,
    AnalysisNode,
    P_DATASETS,
    P_DEPENDS,
    P_PARAMS,
    P_STEP,
    P_STEP_INPUT,
    P_WORKFLOW,
    ProvidedBy,
    dep_package_address,
    load_project,
    load_workflow,
)

P_PROJECT = Term("project")
P_NODE_VERSION = Term("version")
P_PROVIDED_HASH = Term("providedBy")
P_EXECUTOR = Term("executor")
P_KIND = Term("kind")
P_METHOD = Term("method")
P_SOURCE = Term("source")
P_SNAPSHOT = Term("snapshot")
P_OUTPUT = Term("output")
P_OUTPUT_NAME = Term("outputName")


@dataclass(frozen=True)
class LockedStep:
    workflow: str
    name: str
    node: Address
    version: str
    provided_hash: str
    kind: str
    entrypoint: str
    method: str
    inputs: tuple[str, ...]
    params: tuple[tuple[str, Object], ...]

    def param(self, name: str) -> Object:
        return dict(self.params)[name]


@dataclass(frozen=True)
class LockedDataset:
    workflow: str
    requested: Address
    snapshot: CommitRef
    output: Address


@dataclass(frozen=True)
class Lockfile:
    project: Address
    author: str
    quads: frozenset[Quad]
    hash: str
    project_commit: str | None
    steps: tuple[LockedStep, ...]
    deps: tuple[ResolvedDep, ...]
    datasets: tuple[LockedDataset, ...]

    @property
    def address(self) -> Address:
        return self.project.child("lock")

    @property
    def planned_outputs(self) -> tuple[Address, ...]:
        return tuple(d.output for d in self.datasets)

    def text(self) -> str:
        from folkfed.dsl import serialize

        return self.hash + "\n" + serialize(self.quads)

    def workflow_steps(self, workflow: str) -> tuple[LockedStep, ...]:
        return tuple(s for s in self.steps if s.workflow == workflow)


def provided_hash(pb: ProvidedBy) -> str:
    parts = [pb.kind, pb.locator, pb.revision or "", pb.entrypoint, pb.method]
    return hashlib.sha256("\x1f".join(parts).encode("utf-8")).hexdigest()


def _shuffled(items: Iterable, rng: random.Random | None) -> list:
    out = list(items)
    if rng is not None:
        rng.shuffle(out)
    return out


def _split_key(key: str, workflows: Sequence[str]) -> tuple[str | None, str, str]:
    """``[Workflow:]Step:params:name`` into its parts."""
    parts = key.split(":")
    if len(parts) == 4 and parts[2] == "params":
        return parts[0], parts[1], parts[3]
    if len(parts) == 3 and parts[1] == "params":
        return None, parts[0], parts[2]
    raise UsageError(f"bad parameter key {key!r}; expected Step:params:name")


def output_address(store: Store, dataset: Address, template: tuple[str, ...]) -> Address:
    ns = store.namespace_of(dataset)
    if dataset.pins:
        index = dataset.pins[0][0]
        root = Address(ns, dataset.segments[: index + 1])
    else:
        root = Address(ns, dataset.segments)
    return root.child(*template[1:]) if template else root


def freeze(
    store: Store,
    project: Address,
    registry: Registry,
    overrides: Mapping[str, Object] | None = None,
    rng: random.Random | None = None,
) -> Lockfile:
    """Pin every reference of ``project``; byte-deterministic for fixed inputs.

    ``overrides`` take precedence over the project's global parameters and
    use the same ``[Workflow:]Step:params:name`` keys.  ``rng`` shuffles the
    internal processing order (a determinism check, not a feature).
    """
    proj = load_project(store, project)
    author = proj.address.peer
    record = store.resolve(project)
    names = [w.name for w in proj.workflows]
    overrides = dict(overrides or {})
    for key in overrides:
        wf, _, _ = _split_key(key, names)
        if wf is not None and wf not in names:
            raise UsageError(f"bad parameter key {key!r}: no workflow {wf}")

    steps: list[LockedStep] = []
    datasets: list[LockedDataset] = []
    all_nodes: list[AnalysisNode] = []
    for ref in _shuffled(proj.workflows, rng):
        wf = load_workflow(store, ref.workflow)
        dag = build_dag(store, wf)
        values: dict[tuple[str, str], Object] = {}
        for s in wf.steps:
            for p in dag.nodes[s.name].params:
                if p.default is not None:
                    values[(s.name, p.name)] = p.default
        applied = [(k, v) for k, v in ref.global_params] + [
            (k, v) for k, v in sorted(overrides.items()) if _split_key(k, names)[0] in (None, ref.name)
        ]
        for key, value in applied:
            _, step, pname = _split_key(key, names)
            try:
                dag.nodes[step].param(pname)
            except (KeyError, NotFound):
                raise UsageError(f"bad parameter key {key!r} for workflow {ref.name}") from None
            values[(step, pname)] = value
        for s in _shuffled(wf.steps, rng):
            node = dag.nodes[s.name]
            all_nodes.append(node)
            params = []
            for p in node.params:
                if (s.name, p.name) not in values:
                    raise UsageError(f"parameter {p.name} of step {s.name} has no value")
                params.append((p.name, values[(s.name, p.name)]))
            pb = node.provided_by
            steps.append(
                LockedStep(
                    ref.name, s.name, node.address, str(node.version) if node.version else "0",
                    provided_hash(pb), pb.kind, pb.entrypoint, pb.method, s.inputs, tuple(params),
                )
            )
        for ds in _shuffled(ref.datasets, rng):
            snap = store.resolve(ds)
            if snap.at_commit is None:
                raise NotFound(f"dataset {ds} has no snapshot")
            at = snap.at_commit if ds.pinned else _last_touch(store, snap.address, snap.at_commit)
            datasets.append(LockedDataset(ref.name, ds, CommitRef(at, snap.address), output_address(store, ds, wf.output_name)))

    specs = [(d, n.address) for n in _shuffled(all_nodes, rng) for d in n.depends_on]
    deps = resolve_specs(registry, specs)
    return _assemble(
        proj.address,
        author,
        _last_touch(store, proj.address, record.at_commit),
        sorted(steps, key=lambda s: (s.workflow, s.name)),
        [deps[k] for k in sorted(deps)],
        sorted(datasets, key=lambda d: (d.workflow, str(d.requested))),
    )


def _last_touch(store: Store, address: Address, fallback: str | None) -> str | None:
    """Newest commit that changed ``address``'s subtree, so unrelated commits leave locks alone."""
    touched = store.history(address)
    return touched[0].id if touched else fallback


def _dep_address(d: ResolvedDep) -> Address:
    from folkfed.workflow.model import DepSpec

    pkg = dep_package_address(DepSpec(Address(d.ecosystem), d.package, VersionReq.parse("*")))
    req = VersionReq("exact", d.version.parts)
    return Address(pkg.peer, pkg.segments + d.qualifiers, ((len(pkg.segments) - 1, req),))


def _assemble(project, author, project_commit, steps, deps, datasets) -> Lockfile:
    L = project.child("lock")
    q: set[Quad] = {Quad(author, L, A, LOCKFILE_TYPE)}
    q.add(Quad(author, L, P_PROJECT, CommitRef(project_commit, project) if project_commit else project))
    for wf in sorted({s.workflow for s in steps} | {d.workflow for d in datasets}):
        W = L.child(wf)
        q.add(Quad(author, L, P_WORKFLOW, W))
        for s in (s for s in steps if s.workflow == wf):
            S = W.child(s.name)
            q |= {
                Quad(author, W, P_STEP, S),
                Quad(author, S, A, s.node),
                Quad(author, S, P_NODE_VERSION, Literal.string(s.version)),
                Quad(author, S, P_PROVIDED_HASH, Literal.string(s.provided_hash)),
                Quad(author, S, P_KIND, Literal.string(s.kind)),
                Quad(author, S, P_EXECUTOR, Literal.string(s.entrypoint)),
                Quad(author, S, P_METHOD, Literal.string(s.method)),
            }
            q |= {Quad(author, S, P_STEP_INPUT, Term(i if i == "input" else f"{i}:output")) for i in s.inputs}
            if s.params:
                P = S.child("params")
                q.add(Quad(author, S, P_PARAMS, P))
                q |= {Quad(author, P, Term(name), value) for name, value in s.params}
        for i, d in enumerate(d for d in datasets if d.workflow == wf):
            D = W.child(f"dataset{i + 1}")
            q |= {
                Quad(author, W, P_DATASETS, D),
                Quad(author, D, P_SOURCE, d.requested),
                Quad(author, D, P_SNAPSHOT, d.snapshot),
                Quad(author, D, P_OUTPUT, d.output),
            }
    if deps:
        X = L.child("deps")
        q.add(Quad(author, L, P_DEPENDS, X))
        for d in deps:
            addr = _dep_address(d)
            q.add(Quad(author, X, ITEM, addr))
            pkg = Address(addr.peer, addr.segments[: len(addr.segments) - len(d.qualifiers)])
            q |= {Quad(author, X, pkg.child("extraSource"), Literal.string(src)) for src in d.sources}
    quads = frozenset(q)
    return Lockfile(project, author, quads, quads_hash(quads), project_commit, tuple(steps), tuple(deps), tuple(datasets))


def parse_lockfile(text: str) -> Lockfile:
    """Read a ``.flock`` file; raises IntegrityError if the header hash is off."""
    from folkfed.dsl import parse_text

    header, _, body = text.partition("\n")
    quads = parse_text(body)
    if quads_hash(quads) != header.strip():
        raise IntegrityError("lockfile content does not match its hash header")
    lock_subjects = [q.subject for q in quads if q.predicate == A and q.object == LOCKFILE_TYPE]
    if len(lock_subjects) != 1:
        raise IntegrityError("lockfile must describe exactly one lock")
    L = lock_subjects[0]
    by: dict[Address, list[Quad]] = {}
    for q in sorted(quads, key=Quad.sort_key):
        by.setdefault(q.subject, []).append(q)

    def objs(s, p):
        return [q.object for q in by.get(s, []) if q.predicate == p]

    def one(s, p):
        found = objs(s, p)
        if not found:
            raise IntegrityError(f"lockfile is missing {p} on {s}")
        return found[0]

    project = Address(L.peer, L.segments[:-1])
    proj_obj = one(L, P_PROJECT)
    commit = proj_obj.commit if isinstance(proj_obj, CommitRef) else None
    steps, datasets, deps = [], [], []
    for W in objs(L, P_WORKFLOW):
        wf = W.segments[-1]
        for S in objs(W, P_STEP):
            P = objs(S, P_PARAMS)
            params = tuple(sorted(((q.predicate.text, q.object) for q in by.get(P[0], [])), key=lambda kv: kv[0])) if P else ()
            inputs = tuple(sorted("input" if str(i) == "input" else str(i)[: -len(":output")] for i in objs(S, P_STEP_INPUT)))
            steps.append(
                LockedStep(
                    wf, S.segments[-1], one(S, A), one(S, P_NODE_VERSION).value, one(S, P_PROVIDED_HASH).value,
                    one(S, P_KIND).value, one(S, P_EXECUTOR).value, one(S, P_METHOD).value, inputs, params,
                )
            )
        for D in objs(W, P_DATASETS):
            datasets.append(LockedDataset(wf, one(D, P_SOURCE), one(D, P_SNAPSHOT), one(D, P_OUTPUT)))
    for X in objs(L, P_DEPENDS):
        extras: dict[Address, list[str]] = {}
        for q in by.get(X, []):
            if isinstance(q.predicate, Address) and q.predicate.segments[-1:] == ("extraSource",):
                extras.setdefault(Address(q.predicate.peer, q.predicate.segments[:-1]), []).append(q.object.value)
        for addr in objs(X, ITEM):
            index, req = addr.pins[0]
            head = addr.segments[: index + 1]
            pkg = Address(addr.peer, head)
            deps.append(
                ResolvedDep(addr.peer, ":".join(head) if head else addr.peer, Version(tuple(req.pattern)),
                            tuple(sorted(extras.get(pkg, []))), tuple(addr.segments[index + 1:]))
            )
    return Lockfile(
        project, L.peer if not quads else next(iter(quads)).author, frozenset(quads), header.strip(), commit,
        tuple(sorted(steps, key=lambda s: (s.workflow, s.name))),
        tuple(sorted(deps, key=lambda d: (d.ecosystem, d.package))),
        tuple(sorted(datasets, key=lambda d: (d.workflow, str(d.requested)))),
    )


def expand_grid(
    store: Store,
    project: Address,
    registry: Registry,
    grid: Mapping[str, Sequence[Object]],
) -> list[Lockfile]:
    """One lockfile per point of the Cartesian product of ``grid``."""
    keys = sorted(grid)
    for k in keys:
        if not grid[k]:
            raise UsageError(f"grid key {k!r} has no values")
    out = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        out.append(freeze(store, project, registry, dict(zip(keys, combo))))
    return out
