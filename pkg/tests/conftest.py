from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from folkfed.dsl import parse_text
from folkfed.identity import HandleTable, generate_identity
from folkfed.linkstore import Store, version_quad
from folkfed.terms import Address, Literal, Quad, Term
from folkfed.vocab import CONTENT

FIXTURES = Path(__file__).parent / "fixtures"

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def fixture_text(name: str) -> str:
    return (FIXTURES / name).read_text(encoding="utf-8")


def identity(name: str):
    """Deterministic identity keyed by a short name."""
    return generate_identity(name.encode().ljust(32, b"\0"), name)


@dataclass
class World:
    """A store holding the analysis fixtures plus three versioned datasets."""

    store: Store
    ids: dict
    handles: HandleTable
    registry_text: str

    def pid(self, handle: str) -> str:
        return self.ids[handle][0].peer_id

    def secret(self, handle: str):
        return self.ids[handle][1]

    def put(self, handle: str, *files: str) -> None:
        quads: set[Quad] = set()
        for f in files:
            quads |= parse_text(fixture_text(f + ".fld"), handles=self.handles)
        self.store.commit(self.pid(handle), self.secret(handle), quads)


DATASETS = [
    ("mydata1", ["0.1.0"], [1, 1, 2, 3, 5, 8]),
    ("mydata2", ["0.2.0", "0.2.5"], [2, 2, 2, 2, 2, 2, 9]),
    ("mydata3", ["0.1.1"], [0, 1, 2, 3, 4, 5, 6, 7, 8]),
]


def build_world(root=None) -> World:
    ids = {h: identity(h) for h in ("jonny", "someone-else", "friend")}
    handles = HandleTable({h: r.peer_id for h, (r, _) in ids.items()})
    store = Store(root, identities=[r for r, _ in ids.values()], handles=handles)
    w = World(store, ids, handles, fixture_text("registry.txt"))
    w.put("jonny", "bin-spikes", "my-analysis", "my-project", "builtin-project")
    w.put("someone-else", "another-step")
    w.put("friend", "friend-bin-spikes")
    j = w.pid("jonny")
    for name, versions, data in DATASETS:
        for v in versions:
            ref = store.put_blob(json.dumps(data).encode(), "json")
            raw = Address(j, (name, "raw"))
            old = [q for q in store.visible(j) if q.subject == raw]
            store.commit(j, w.secret("jonny"), [Quad(j, raw, CONTENT, ref), version_quad(j, Address(j, (name,)), v)], old)
    return w


@pytest.fixture
def world() -> World:
    return build_world()


# -- hypothesis strategies ----------------------------------------------------

SEGMENT = st.text("abcdefgxyz0123_-", min_size=1, max_size=6).filter(lambda s: s[0].isalpha())
PEERS = [identity(f"p{i}")[0].peer_id for i in range(3)]


def addresses(peers=tuple(PEERS) + ("nwb", "jonny")) -> st.SearchStrategy[Address]:
    return st.builds(
        lambda p, segs: Address(p, tuple(segs)),
        st.sampled_from(peers),
        st.lists(SEGMENT, min_size=0, max_size=3),
    )


PRINTABLE = st.text(st.characters(blacklist_categories=("Cs",)), max_size=12)

literals = st.one_of(
    PRINTABLE.map(Literal.string),
    st.integers(-(10**9), 10**9).map(Literal.integer),
    st.lists(st.integers(-50, 50), max_size=4).map(Literal.seq),
)

predicates = st.one_of(
    st.sampled_from(["a", "extends", "rate", "hasDescription", "name"]).map(Term),
    addresses().filter(lambda a: a.segments),
)


def quads(authors=tuple(PEERS)) -> st.SearchStrategy[Quad]:
    return st.builds(
        Quad,
        st.sampled_from(authors),
        addresses(),
        predicates,
        st.one_of(literals, addresses()),
    )


def quad_sets(authors=tuple(PEERS), max_size=12):
    return st.frozensets(quads(authors), max_size=max_size)


# -- simnet scenarios -----------------------------------------------------------


def open_peer_factory(chunk_size: int = 4096):
    """Peers that grant Full to every member of one shared federation."""
    from folkfed.federation import Grant, GrantLevel, PermissionRuleSet
    from folkfed.sync import Peer

    rules = PermissionRuleSet((Grant("sim", GrantLevel.FULL),))

    class _Everyone(dict):
        def get(self, key, default=None):
            return ("sim",)

    def factory(i, record, secret):
        return Peer(record, secret, rules=rules, fed_view=_Everyone(), chunk_size=chunk_size)

    return factory


def mutual_pins(net) -> None:
    from folkfed.sync import Selector

    for a in net.order:
        for b in net.order:
            if a != b:
                net.send(a, net.peers[a].pin(b, Selector(Address(b))))


def random_commits(net, rng, count: int, settle_every: int = 0, blob_every: int = 0) -> None:
    """Commit ``count`` random quads from random authors, stepping in between."""
    for k in range(count):
        author = rng.choice(net.order)
        peer = net.peers[author]
        subject = Address(author, (f"n{rng.randrange(8)}",))
        if blob_every and k % blob_every == 0:
            obj = peer.store.put_blob(f"blob {k}".encode() * 40, "bin")
        else:
            obj = Literal.integer(rng.randrange(1000))
        old = [q for q in peer.store.visible(author) if q.subject == subject and rng.random() < 0.5]
        _, out = peer.commit([Quad(author, subject, Term("v"), obj)], old)
        net.send(author, out)
        for _ in range(rng.randint(0, 3)):
            net.step()
        if settle_every and k % settle_every == settle_every - 1:
            net.run_until_quiescent()


def convergence_run(seed: int, drop_rate: float, n: int = 10, commits: int = 200):
    """Mutually pinned peers under a random commit script; returns (net, metrics)."""
    import random as _random

    from folkfed.simnet import create

    net = create(n, seed, (1, 5), drop_rate, open_peer_factory())
    mutual_pins(net)
    random_commits(net, _random.Random(seed), commits)
    metrics = net.run_until_quiescent(1_000_000)
    return net, metrics


def pinned_heads_equal(net) -> bool:
    for peer in net.peers.values():
        for target in peer.pins:
            if peer.store.head(target) != net.peers[target].store.head(target):
                return False
            if peer.store.visible(target) != net.peers[target].store.visible(target):
                return False
    return True


# -- version oracle -------------------------------------------------------------


def oracle_match(v: tuple[int, ...], op: str, pattern: tuple) -> bool:
    """Interval reading of the requirement operators."""
    width = max(len(v), len(pattern))
    v = v + (0,) * (width - len(v))
    low = tuple(0 if p is None else p for p in pattern) + (0,) * (width - len(pattern))
    if op == "exact":
        return all(p is None or v[i] == p for i, p in enumerate(pattern))
    if op in ("ge", "gt", "le", "lt"):
        return {"ge": v >= low, "gt": v > low, "le": v <= low, "lt": v < low}[op]
    concrete = [i for i, p in enumerate(pattern) if p is not None]
    if op == "caret":
        nonzero = [i for i in concrete if pattern[i] != 0]
        fixed = nonzero[0] if nonzero else (concrete[-1] if concrete else -1)
    else:
        # a wildcard matches any value, so the fixed prefix ends at a concrete segment
        fixed = max((i for i in concrete if i <= max(len(pattern) - 2, 0)), default=-1)
    if fixed < 0:
        return v >= low
    upper = low[:fixed] + (low[fixed] + 1,)
    return low <= v and v[: fixed + 1] < upper


LATTICE = [(a, b, c) for a in range(26) for b in range(10) for c in range(10)]
FIXTURE_REQS = ["^20.*", "^4.*.*", "≥0.1.1", "^0.2.*", "v0.1.0", "3.8", "1.0.0", "~1.2.3", "~1.*.*", "~0.*", "<2", ">1.5", "<=0.3", "*"]


def oracle_resolve(registry: dict, constraints: list[tuple[tuple[str, str], object]]):
    """Enumerate every version combination and keep the greatest feasible one.

    ``constraints`` pairs a package key with a parsed requirement.  Returns
    ``("ok", {key: version_tuple})``, ``("unknown", None)`` or
    ``("conflict", None)``.
    """
    import itertools

    keys = sorted({k for k, _ in constraints})
    # failures are reported for the first offending package in key order
    for k in keys:
        if k not in registry:
            return "unknown", None
        if not any(all(oracle_match(tuple(v.parts), r.operator, r.pattern) for kk, r in constraints if kk == k)
                   for v in registry[k]):
            return "conflict", None
    choices = [sorted(tuple(v.parts) for v in registry[k]) for k in keys]
    feasible = [
        combo
        for combo in itertools.product(*choices)
        if all(oracle_match(combo[keys.index(k)], r.operator, r.pattern) for k, r in constraints)
    ]
    if not feasible:
        return "conflict", None
    # the feasible set is a product, so its lexicographic max is also the per-package max
    best = max(feasible)
    assert all(best[i] == max(c[i] for c in feasible) for i in range(len(keys)))
    return "ok", dict(zip(keys, best))


# -- acceptance reporting ---------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_quad_set(rng, authors, size: int) -> frozenset[Quad]:
    """A reproducible quad set drawn from ``rng`` over mixed object kinds."""
    out = set()
    for _ in range(size):
        author = rng.choice(authors)
        subject = Address(author, tuple(rng.choice("abcxyz") + str(rng.randint(0, 9)) for _ in range(rng.randint(0, 3))))
        predicate = rng.choice([Term("a"), Term("rate"), Term("name"), Address("nwb", ("general", "experimenter"))])
        kind = rng.randint(0, 5)
        if kind == 0:
            obj = Literal.integer(rng.randint(-(10**9), 10**9))
        elif kind == 1:
            obj = Literal.string("".join(rng.choice("ab \"\\\nzé") for _ in range(rng.randint(0, 8))))
        elif kind == 2:
            obj = Literal.seq([rng.randint(0, 9) for _ in range(rng.randint(0, 4))])
        elif kind == 3:
            obj = Literal.decimal(f"{rng.randint(0, 999)}.{rng.randint(0, 99):02d}")
        elif kind == 4:
            obj = Address(rng.choice(authors), ("o", f"n{rng.randint(0, 99)}"))
        else:
            obj = Term(rng.choice(["true", "false", "int"]))
        out.add(Quad(author, subject, predicate, obj))
    return frozenset(out)
