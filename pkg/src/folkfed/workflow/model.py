"""Analysis nodes, workflows and projects read back from quads."""

from __future__ import annotations

import re
from dataclasses import dataclass

from folkfed.errors import NotFound, UsageError
from folkfed.linkstore import Store
from folkfed.terms import ELIDED, Address, Literal, Object, Quad, Term, Version, VersionReq
from folkfed.vocab import A, EXTENDS, ITEM, VERSION

NODE_TYPE = Address("analysis", ("node",))
WORKFLOW_TYPE = Address("analysis", ("workflow",))
PROJECT_TYPE = Address("analysis", ("project",))
LOCKFILE_TYPE = Address("analysis", ("lockfile",))

P_VERSION = Term("Version")
P_DESCRIPTION = Term("hasDescription")
P_INPUT = Term("inputType")
P_OUTPUT = Term("outputType")
P_PARAMS = Term("params")
P_DEFAULT = Term("default")
P_PARAMETERIZES = Term("parameterizes")
P_DEPENDS = Term("dependsOn")
P_PROVIDED = Term("providedBy")
P_METHOD = Term("method")
P_STEP = Term("step")
P_STEP_INPUT = Term("input")
P_OUTPUT_NAME = Term("outputName")
P_WORKFLOW = Term("workflow")
P_GLOBAL = Term("globalParams")
P_DATASETS = Term("datasets")
P_TOPIC = Term("researchTopic")

_PARAM_RESERVED = {"default", "parameterizes"}
_VERSION_TEXT = re.compile(r"[0-9]+(?:\.[0-9]+)*")


@dataclass(frozen=True)
class ParamDecl:
    name: str
    type: Object
    default: Object | None = None
    parameterizes: Address | None = None


@dataclass(frozen=True)
class DepSpec:
    ecosystem: Address
    package: str
    req: VersionReq
    qualifiers: tuple[str, ...] = ()
    extra_sources: tuple[str, ...] = ()

    @property
    def key(self) -> tuple[str, str]:
        return self.ecosystem.peer, self.package

    def __str__(self) -> str:
        return f"{self.ecosystem.peer}:{self.package} {self.req}"


@dataclass(frozen=True)
class ProvidedBy:
    kind: str
    locator: str
    revision: str | None
    entrypoint: str
    method: str

    def __post_init__(self):
        if self.kind not in ("repository", "builtin"):
            raise UsageError(f"providedBy kind must be repository or builtin, not {self.kind!r}")


@dataclass(frozen=True)
class AnalysisNode:
    address: Address
    version: Version | None
    description: str
    input_types: tuple[Address, ...]
    output_types: tuple[Address, ...]
    params: tuple[ParamDecl, ...]
    depends_on: tuple[DepSpec, ...]
    provided_by: ProvidedBy
    extends: Address | None = None

    def __post_init__(self):
        names = [p.name for p in self.params]
        if len(names) != len(set(names)):
            raise UsageError(f"duplicate parameter names on {self.address}")

    def param(self, name: str) -> ParamDecl:
        for p in self.params:
            if p.name == name:
                return p
        raise NotFound(f"{self.address} has no parameter {name!r}")


@dataclass(frozen=True)
class StepDecl:
    name: str
    node: Address
    inputs: tuple[str, ...]


@dataclass(frozen=True)
class Workflow:
    address: Address
    input_type: Address | None
    output_name: tuple[str, ...]
    steps: tuple[StepDecl, ...]

    def step(self, name: str) -> StepDecl:
        for s in self.steps:
            if s.name == name:
                return s
        raise NotFound(f"workflow {self.address} has no step {name!r}")


@dataclass(frozen=True)
class WorkflowRef:
    name: str
    workflow: Address
    global_params: tuple[tuple[str, Object], ...]
    datasets: tuple[Address, ...]


@dataclass(frozen=True)
class Project:
    address: Address
    description: str
    topics: tuple[Address, ...]
    workflows: tuple[WorkflowRef, ...]


def _sorted(quads) -> list[Quad]:
    return sorted(quads, key=Quad.sort_key)


class _View:
    """Owner-authored quads of one object subtree, grouped by subject."""

    def __init__(self, store: Store, address: Address):
        rec = store.resolve(address)
        self.root = rec.address
        self.commit = rec.at_commit
        self.by_subject: dict[Address, list[Quad]] = {}
        for q in _sorted(rec.quads):
            self.by_subject.setdefault(q.subject.unpinned(), []).append(q)

    def about(self, subject: Address) -> list[Quad]:
        return self.by_subject.get(subject.unpinned(), [])

    def objects(self, subject: Address, predicate) -> list[Object]:
        return [q.object for q in self.about(subject) if q.predicate == predicate]

    def one(self, subject: Address, predicate) -> Object | None:
        objs = self.objects(subject, predicate)
        return objs[0] if objs else None


def _text(obj: Object | None) -> str | None:
    if obj is None:
        return None
    if isinstance(obj, Literal) and obj.kind == "string":
        return obj.value
    return str(obj)


def parse_node_version(obj: Object | None) -> Version | None:
    """A node's own version; requirement decorations such as ``≥`` are dropped."""
    text = _text(obj)
    if text is None:
        return None
    m = _VERSION_TEXT.search(text)
    if m is None:
        raise UsageError(f"malformed node version {text!r}")
    return Version.parse(m.group(0))


def dep_from_address(addr: Address, extras: tuple[str, ...] = ()) -> DepSpec:
    """``@apt:opencv:"^4.*.*"`` and ``@ubuntu:"^20.*":x64`` style dependency addresses."""
    if len(addr.pins) > 1:
        raise UsageError(f"dependency {addr} carries more than one version pin")
    if addr.pins:
        index, req = addr.pins[0]
    else:
        index, req = len(addr.segments) - 1, VersionReq.parse("*")
    head = addr.segments[: index + 1]
    package = ":".join(head) if head else addr.peer
    return DepSpec(Address(addr.peer), package, req, tuple(addr.segments[index + 1:]), extras)


def dep_package_address(dep: DepSpec) -> Address:
    if dep.package == dep.ecosystem.peer:
        return dep.ecosystem
    return Address(dep.ecosystem.peer, tuple(dep.package.split(":")))


def _params(view: _View, node: Address) -> tuple[ParamDecl, ...]:
    out = []
    flat_default = view.one(node, P_DEFAULT)
    decls = [q for q in view.about(node) if isinstance(q.predicate, Term) and q.predicate.text not in _PARAM_RESERVED]
    if flat_default is not None and len(decls) != 1:
        raise UsageError(f"{node}: a shared default needs exactly one parameter")
    for q in decls:
        if not isinstance(q.object, (Term, Address)):
            raise UsageError(f"{node}: parameter {q.predicate} needs a type")
        sub = node.child(q.predicate.text)
        default = view.one(sub, P_DEFAULT)
        if default is None:
            default = flat_default
        par = view.one(sub, P_PARAMETERIZES)
        if par is not None and not isinstance(par, Address):
            raise UsageError(f"{node}: parameterizes must name an address")
        out.append(ParamDecl(q.predicate.text, q.object, default, par))
    return tuple(sorted(out, key=lambda p: p.name))


def _depends(view: _View, node: Address) -> tuple[DepSpec, ...]:
    quads = view.about(node)
    if not quads:  # a lone dependency collapses to a direct object
        return (dep_from_address(node),)
    out = []
    for q in quads:
        if q.predicate != ITEM or not isinstance(q.object, Address):
            continue
        probe = dep_from_address(q.object)
        extra_pred = dep_package_address(probe).child("extraSource")
        extras = tuple(sorted(_text(x.object) for x in quads if x.predicate == extra_pred))
        out.append(dep_from_address(q.object, extras))
    return tuple(sorted(out, key=lambda d: (d.key, str(d.req), d.qualifiers)))


def _provided(view: _View, node: Address) -> ProvidedBy | None:
    quads = view.about(node)
    items = [q.object for q in quads if q.predicate == ITEM and isinstance(q.object, Address)]
    if not quads:  # a lone source collapses to a direct object
        items = [node]
    if not items:
        return None
    src = items[0]
    method = _text(view.one(node, P_METHOD)) or "run"
    if src.peer == "builtin":
        return ProvidedBy("builtin", str(src), None, "builtin:" + ":".join(src.segments), method)
    url = _text(view.one(node, src.child("url"))) or str(src)
    rev = _text(view.one(node, src.child("hash")))
    entry = next(
        (_text(q.object) for q in quads if isinstance(q.predicate, Address) and q.predicate.segments[-1:] == ("class",)),
        None,
    )
    return ProvidedBy("repository", url, rev, entry or str(src), method)


def load_node(store: Store, address: Address) -> AnalysisNode:
    """Reconstruct a node; an ``extends`` node inherits whatever it leaves unsaid."""
    return _load_node(store, address, set())


def _load_node(store: Store, address: Address, seen: set) -> AnalysisNode:
    try:
        view = _View(store, address)
    except NotFound:
        raise NotFound(f"no analysis node at {address}") from None
    root = view.root
    if root in seen:
        raise UsageError(f"node {address} extends itself")
    seen.add(root)
    types = view.objects(root, A)
    base_addr = view.one(root, EXTENDS)
    if NODE_TYPE not in types and not isinstance(base_addr, Address):
        raise NotFound(f"no analysis node at {address}")
    base = _load_node(store, base_addr, seen) if isinstance(base_addr, Address) else None

    version_obj = view.one(root, P_VERSION) or view.one(root, VERSION)
    version = parse_node_version(version_obj) if version_obj is not None else (base.version if base else None)
    desc = _text(view.one(root, P_DESCRIPTION))
    inputs = tuple(o for o in view.objects(root, P_INPUT) if isinstance(o, Address))
    outputs = tuple(o for o in view.objects(root, P_OUTPUT) if isinstance(o, Address))
    params_node = view.one(root, P_PARAMS)
    params = _params(view, params_node) if isinstance(params_node, Address) else None
    deps_node = view.one(root, P_DEPENDS)
    deps = _depends(view, deps_node) if isinstance(deps_node, Address) else None
    prov_node = view.one(root, P_PROVIDED)
    provided = _provided(view, prov_node) if isinstance(prov_node, Address) else None
    if provided is None and prov_node is not None and prov_node != ELIDED:
        raise UsageError(f"{address}: providedBy must be a block")
    if base is not None:
        desc = desc if desc is not None else base.description
        inputs = inputs or base.input_types
        outputs = outputs or base.output_types
        params = params if params is not None else base.params
        deps = deps if deps is not None else base.depends_on
        provided = provided or base.provided_by
    if provided is None:
        raise NotFound(f"{address} has no providedBy")
    if provided.kind == "builtin" and base is None:
        deps = deps or ()
    return AnalysisNode(
        root,
        version,
        desc or "",
        tuple(sorted(inputs, key=str)),
        tuple(sorted(outputs, key=str)),
        params or (),
        deps or (),
        provided,
        base.address if base else None,
    )


def node_quads(node: AnalysisNode, author: str) -> frozenset[Quad]:
    """Quads that load back to ``node`` (nested parameter form)."""
    a = node.address
    out = {Quad(author, a, A, NODE_TYPE)}
    if node.extends is not None:
        out.add(Quad(author, a, EXTENDS, node.extends))
    if node.version is not None:
        out.add(Quad(author, a, P_VERSION, Literal.string(str(node.version))))
    if node.description:
        out.add(Quad(author, a, P_DESCRIPTION, Literal.string(node.description)))
    out |= {Quad(author, a, P_INPUT, t) for t in node.input_types}
    out |= {Quad(author, a, P_OUTPUT, t) for t in node.output_types}
    if node.params:
        pn = a.child("params")
        out.add(Quad(author, a, P_PARAMS, pn))
        for p in node.params:
            out.add(Quad(author, pn, Term(p.name), p.type))
            if p.default is not None:
                out.add(Quad(author, pn.child(p.name), P_DEFAULT, p.default))
            if p.parameterizes is not None:
                out.add(Quad(author, pn.child(p.name), P_PARAMETERIZES, p.parameterizes))
    if node.depends_on:
        dn = a.child("dependsOn")
        out.add(Quad(author, a, P_DEPENDS, dn))
        for d in node.depends_on:
            pkg = dep_package_address(d)
            index = len(pkg.segments) - 1
            addr = Address(pkg.peer, pkg.segments + d.qualifiers, ((index, d.req),))
            out.add(Quad(author, dn, ITEM, addr))
            out |= {Quad(author, dn, pkg.child("extraSource"), Literal.string(s)) for s in d.extra_sources}
    pb = node.provided_by
    prov = a.child("providedBy")
    out.add(Quad(author, a, P_PROVIDED, prov))
    out.add(Quad(author, prov, P_METHOD, Literal.string(pb.method)))
    if pb.kind == "builtin":
        out.add(Quad(author, prov, ITEM, Address("builtin", tuple(pb.entrypoint.split(":")[1:]))))
    else:
        src = Address("git", ("repository",))
        out.add(Quad(author, prov, ITEM, src))
        out.add(Quad(author, prov, src.child("url"), Literal.string(pb.locator)))
        if pb.revision is not None:
            out.add(Quad(author, prov, src.child("hash"), Literal.string(pb.revision)))
        out.add(Quad(author, prov, Address("python", ("class",)), Literal.string(pb.entrypoint)))
    return frozenset(out)


def _step_ref(obj: Object) -> str:
    text = str(obj) if not isinstance(obj, Literal) else obj.value
    if text == "input":
        return "input"
    if text.endswith(":output"):
        return text[: -len(":output")]
    raise UsageError(f"step input must be 'input' or '<Step>:output', not {text!r}")


def load_workflow(store: Store, address: Address) -> Workflow:
    try:
        view = _View(store, address)
    except NotFound:
        raise NotFound(f"no workflow at {address}") from None
    root = view.root
    if WORKFLOW_TYPE not in view.objects(root, A):
        raise NotFound(f"no workflow at {address}")
    input_type = view.one(root, P_INPUT)
    out_name = view.one(root, P_OUTPUT_NAME)
    template: tuple[str, ...] = ()
    if out_name is not None:
        template = tuple(_text(out_name).split(":"))
        if template[0] != "input":
            raise UsageError(f"{address}: outputName must start with 'input'")
    steps = []
    for s in view.objects(root, P_STEP):
        if not isinstance(s, Address) or not s.segments:
            raise UsageError(f"{address}: malformed step {s}")
        node = next((o for o in view.objects(s, A) if isinstance(o, Address)), None)
        if node is None:
            raise UsageError(f"{address}: step {s.segments[-1]} names no node")
        inputs = tuple(sorted(_step_ref(o) for o in view.objects(s, P_STEP_INPUT))) or ("input",)
        steps.append(StepDecl(s.segments[-1], node, inputs))
    names = [s.name for s in steps]
    if len(names) != len(set(names)):
        raise UsageError(f"{address}: duplicate step names")
    for s in steps:
        for ref in s.inputs:
            if ref != "input" and ref not in names:
                raise NotFound(f"{address}: step {s.name} wires from unknown step {ref!r}")
    return Workflow(
        root,
        input_type if isinstance(input_type, Address) else None,
        template,
        tuple(sorted(steps, key=lambda s: s.name)),
    )


def load_project(store: Store, address: Address) -> Project:
    try:
        view = _View(store, address)
    except NotFound:
        raise NotFound(f"no project at {address}") from None
    root = view.root
    if PROJECT_TYPE not in view.objects(root, A):
        raise NotFound(f"no project at {address}")
    refs = []
    for w in view.objects(root, P_WORKFLOW):
        if not isinstance(w, Address) or not w.segments:
            raise UsageError(f"{address}: malformed workflow reference {w}")
        target = next((o for o in view.objects(w, A) if isinstance(o, Address)), None)
        if target is None:
            raise UsageError(f"{address}: workflow {w.segments[-1]} names no workflow")
        target = Address(store.namespace_of(target), target.segments, target.pins)
        params = []
        for gp in view.objects(w, P_GLOBAL):
            for q in view.about(gp) if isinstance(gp, Address) else ():
                pred = q.predicate
                if isinstance(pred, Address):
                    pred = Address(store.namespace_of(pred), pred.segments)
                    if not pred.is_within(target.unpinned()):
                        raise UsageError(f"{address}: global parameter {q.predicate} is outside {target}")
                    key = ":".join(pred.relative_to(target.unpinned()))
                else:
                    key = pred.text
                params.append((key, q.object))
        datasets = tuple(sorted((o for o in view.objects(w, P_DATASETS) if isinstance(o, Address)), key=str))
        refs.append(WorkflowRef(w.segments[-1], target, tuple(sorted(params, key=lambda kv: kv[0])), datasets))
    return Project(
        root,
        _text(view.one(root, P_DESCRIPTION)) or "",
        tuple(sorted((o for o in view.objects(root, P_TOPIC) if isinstance(o, Address)), key=str)),
        tuple(sorted(refs, key=lambda r: r.name)),
    )
