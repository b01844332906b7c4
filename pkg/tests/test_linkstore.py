from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fixture_text, identity, quad_sets
from folkfed.dsl import parse_text
from folkfed.errors import Conflict, IntegrityError, NotFound, PermissionDenied
from folkfed.identity import HandleTable
from folkfed.linkstore import (
    MergeConflict,
    Side,
    Store,
    commit_id,
    decode_commit,
    decode_quads,
    encode_commit,
    encode_quads,
    quads_hash,
    read_log,
    version_quad,
)
from folkfed.terms import Address, CommitRef, Literal, Pattern, Quad, Term, parse_address
from folkfed.vocab import FORK_OF, MERGE_OF

JR, JS = identity("jonny")
J = JR.peer_id
OR, OS = identity("other")
O = OR.peer_id
HANDLES = HandleTable({"jonny": J, "other": O})

# Frozen at first build from the canonical row encoding and SHA-256.
VECTOR_QUADS_HASH = "33821b2f3ffb446022acbdb46df0469b7e30529cf04d4535fea9da799c1a5262"
VECTOR_COMMIT_ID = "b862da90e024b04b72741ac5389ffedd89178d400e97b4ee34b83120920b664b"


def vector_quads():
    pid = identity_vector()
    subject = Address(pid, ("my-data",))
    return [
        Quad(pid, subject, Term("a"), parse_address("@nwb:NWBFile")),
        Quad(pid, subject, Term("rate"), Literal.integer(30000)),
    ]


def identity_vector():
    from folkfed.identity import generate_identity

    return generate_identity(b"\x01" * 32, "jonny")[0].peer_id


def new_store(root=None) -> Store:
    return Store(root, identities=[JR, OR], handles=HANDLES)


def my_data() -> frozenset[Quad]:
    return parse_text(fixture_text("my-data.fld"), handles=HANDLES)


def addr(text: str) -> Address:
    return parse_address(text)


# -- canonical encoding --------------------------------------------------------


def test_pinned_hash_vectors():
    qs = vector_quads()
    assert quads_hash(qs) == VECTOR_QUADS_HASH
    assert commit_id((), qs[0].author, 1, qs, ()) == VECTOR_COMMIT_ID
    assert encode_quads(qs).split(b"\n")[0].endswith(b"\x1fa\x1fa\x1f@nwb:NWBFile")


@given(quad_sets())
def test_quad_encoding_round_trip(quads):
    assert decode_quads(encode_quads(quads)) == quads


@given(quad_sets(), st.randoms())
def test_hash_independent_of_order(quads, rnd):
    items = list(quads)
    rnd.shuffle(items)
    assert quads_hash(items) == quads_hash(quads)


def test_commit_encoding_round_trip():
    s = new_store()
    c = s.commit(J, JS, my_data())
    assert decode_commit(encode_commit(c)) == c
    assert read_log(s.export_log()) == s.log(J)


# -- commit / resolve ------------------------------------------------------------


def test_commit_then_resolve():
    s = new_store()
    c = s.commit(J, JS, my_data())
    rec = s.resolve(addr("@jonny:my-data"))
    assert rec.quads == my_data() and rec.at_commit == c.id
    assert c.logical_time == 1 and c.parents == ()


def test_empty_commit_advances_head():
    s = new_store()
    c1 = s.commit(J, JS, my_data())
    c2 = s.commit(J, JS)
    assert s.head(J) == c2.id != c1.id
    assert s.visible(J) == my_data()
    assert c2.logical_time == 2


def test_add_then_remove():
    s = new_store()
    q = Quad(J, addr(f"@{J}:x"), Term("p"), Literal.integer(1))
    s.commit(J, JS, [q])
    s.commit(J, JS, remove=[q])
    assert s.resolve(addr("@jonny:x")).quads == frozenset()
    assert len(s.history(addr("@jonny:x"))) == 2


def test_commit_errors():
    s = new_store()
    q = Quad(J, addr(f"@{J}:x"), Term("p"), Literal.integer(1))
    with pytest.raises(NotFound):
        s.commit(J, JS, remove=[q])
    with pytest.raises(PermissionDenied):
        s.commit(J, JS, [q.with_author(O)])
    with pytest.raises(IntegrityError):
        s.commit(J, OS, [q])


def test_foreign_subjects_are_allowed():
    s = new_store()
    link = Quad(J, addr(f"@{O}:their-data"), Term("disputes"), Literal.string("no"))
    s.commit(J, JS, [link])
    assert link in s.local_query(Pattern(subject=addr(f"@{O}:their-data")))


def test_unknown_namespace():
    with pytest.raises(NotFound):
        new_store().resolve(addr("@nobody:x"))


def _versions(s: Store, name: str, versions):
    cids = {}
    for v in versions:
        raw = addr(f"@{J}:{name}:raw")
        old = [q for q in s.visible(J) if q.subject == raw]
        c = s.commit(J, JS, [Quad(J, raw, Term("value"), Literal.string(v)), version_quad(J, addr(f"@{J}:{name}"), v)], old)
        cids[v] = c.id
    return cids


def test_pinned_resolution_selects_snapshot():
    s = new_store()
    cids = _versions(s, "mydata1", ["0.1.0", "0.2.0"])
    rec = s.resolve(addr("@jonny.mydata1:v0.1.0:raw"))
    assert rec.at_commit == cids["0.1.0"]
    assert {q.object for q in rec.quads} == {Literal.string("0.1.0")}
    latest = s.resolve(addr("@jonny:mydata1:^0.1.0:raw"))
    assert {q.object for q in latest.quads} == {Literal.string("0.1.0")}
    assert {q.object for q in s.resolve(addr("@jonny:mydata1:raw")).quads} == {Literal.string("0.2.0")}
    # snapshot oracle: replay the log up to the pinning commit
    replay: set[Quad] = set()
    for c in s.log(J):
        replay = (replay - c.removed) | c.added
        if c.id == cids["0.1.0"]:
            break
    assert rec.quads == {q for q in replay if q.subject == addr(f"@{J}:mydata1:raw")}


def test_unsatisfiable_pin():
    s = new_store()
    _versions(s, "mydata2", ["0.1.0", "0.1.5"])
    with pytest.raises(NotFound):
        s.resolve(addr("@jonny:mydata2:^0.2.*:raw"))


# -- history / diff ------------------------------------------------------------------


def _random_log(s: Store, rnd: random.Random, n: int):
    pool = [Quad(J, addr(f"@{J}:o{i % 5}"), Term(f"p{i % 3}"), Literal.integer(i)) for i in range(30)]
    for _ in range(n):
        current = s.visible(J)
        add = set(rnd.sample(pool, rnd.randint(0, 4))) - current
        remove = set(rnd.sample(sorted(current, key=lambda q: q.sort_key()), min(len(current), rnd.randint(0, 2))))
        s.commit(J, JS, add, remove)


def test_history_is_newest_first_and_topological():
    s = new_store()
    _random_log(s, random.Random(1), 25)
    for i in range(5):
        a = addr(f"@jonny:o{i}")
        hist = s.history(a)
        sub = addr(f"@{J}:o{i}")
        assert all(any(q.subject.is_within(sub) for q in c.added | c.removed) for c in hist)
        pos = {c.id: k for k, c in enumerate(hist)}
        for c in hist:
            for p in c.parents:
                if p in pos:
                    assert pos[p] > pos[c.id]
        times = [c.logical_time for c in hist]
        assert times == sorted(times, reverse=True)


def test_history_of_fresh_namespace_is_empty():
    s = new_store()
    s.commit(J, JS)
    assert s.history(addr("@jonny:x")) == []


def test_history_counts_commits_touching_address():
    s = new_store()
    for i in range(3):
        s.commit(J, JS, [Quad(J, addr(f"@{J}:x"), Term("p"), Literal.integer(i))])
    s.commit(J, JS, [Quad(J, addr(f"@{J}:y"), Term("p"), Literal.integer(0))])
    assert len(s.history(addr("@jonny:x"))) == 3


def test_diff_examples_and_patch_soundness():
    s = new_store()
    rnd = random.Random(2)
    _random_log(s, rnd, 20)
    log = s.log(J)
    c = log[-1]
    assert s.diff(c.id, c.id) == (frozenset(), frozenset())
    prev = s.visible_at(log[-2].id)
    assert s.diff(log[-2].id, c.id) == (c.added - prev, c.removed & prev)
    # replay oracle
    replay, states = set(), {}
    for commit in log:
        replay = (replay - commit.removed) | commit.added
        states[commit.id] = frozenset(replay)
    for _ in range(60):
        a, b = rnd.choice(log).id, rnd.choice(log).id
        added, removed = s.diff(a, b)
        assert (states[a] - removed) | added == states[b]
    with pytest.raises(NotFound):
        s.diff("00" * 32, c.id)


# -- fork / merge ----------------------------------------------------------------------


def test_fork_copies_and_pins_source():
    s = new_store()
    c = s.commit(J, JS, my_data())
    s.fork(addr("@jonny:my-data"), addr("@jonny:copy"), J, JS)
    got = s.resolve(addr("@jonny:copy")).quads
    src, dst = addr(f"@{J}:my-data"), addr(f"@{J}:copy")

    def moved(q):
        obj = q.object.rebase(src, dst) if isinstance(q.object, Address) and q.object.is_within(src) else q.object
        return Quad(J, q.subject.rebase(src, dst), q.predicate, obj)

    expected = {moved(q) for q in my_data()} | {Quad(J, dst, FORK_OF, CommitRef(c.id, src))}
    assert got == expected
    # later source commits do not leak into the fork
    s.commit(J, JS, [Quad(J, src, Term("late"), Literal.integer(1))])
    assert s.resolve(addr("@jonny:copy")).quads == expected
    with pytest.raises(Conflict):
        s.fork(addr("@jonny:my-data"), addr("@jonny:copy"), J, JS)


def test_fork_of_empty_address():
    s = new_store()
    s.commit(J, JS)
    s.fork(addr("@jonny:nothing"), addr("@jonny:copy"), J, JS)
    (q,) = s.resolve(addr("@jonny:copy")).quads
    assert q.predicate == FORK_OF


def test_fork_merge_identity():
    s = new_store()
    s.commit(J, JS, my_data())
    s.fork(addr("@jonny:my-data"), addr("@jonny:copy"), J, JS)
    copy = s.resolve(addr("@jonny:copy")).quads
    s.merge(addr("@jonny:copy"), addr("@jonny:my-data"), {}, J, JS)
    merged = s.resolve(addr("@jonny:copy")).quads
    provenance = {q for q in merged if q.predicate == MERGE_OF}
    assert len(provenance) == 2
    assert merged - provenance == copy


def _obj(i):
    return Literal.integer(i)


def test_merge_disjoint_and_conflicting():
    s = new_store()
    a, b = addr(f"@{J}:a"), addr(f"@{J}:b")
    s.commit(J, JS, [Quad(J, a, Term("x"), _obj(1)), Quad(J, b, Term("y"), _obj(2))])
    plan = s.merge_plan(addr("@jonny:a"), addr("@jonny:b"))
    assert {(str(q.predicate), q.object) for q in plan if q.predicate != MERGE_OF} == {("x", _obj(1)), ("y", _obj(2))}
    assert sum(q.predicate == MERGE_OF for q in plan) == 2
    s.commit(J, JS, [Quad(J, a, Term("z"), _obj(3)), Quad(J, b, Term("z"), _obj(4))])
    with pytest.raises(MergeConflict) as info:
        s.merge_plan(addr("@jonny:a"), addr("@jonny:b"))
    assert info.value.conflicts == (((), "z"),)
    plan = s.merge_plan(addr("@jonny:a"), addr("@jonny:b"), {((), "z"): Side("a")})
    zs = {q.object for q in plan if q.predicate == Term("z")}
    assert zs == {_obj(3)}
    s.merge(addr("@jonny:a"), addr("@jonny:b"), {((), "z"): _obj(4)}, J, JS)
    assert {q.object for q in s.resolve(addr("@jonny:a")).quads if q.predicate == Term("z")} == {_obj(4)}


@settings(max_examples=500)
@given(st.data())
def test_merge_is_symmetric(data):
    s = new_store()
    keys = [("p", ()), ("q", ()), ("p", ("c",))]
    side = lambda: data.draw(st.dictionaries(st.sampled_from(keys), st.integers(0, 2), max_size=3))
    sa, sb = side(), side()
    a, b = addr(f"@{J}:a"), addr(f"@{J}:b")
    quads = [Quad(J, a.child(*path), Term(p), _obj(v)) for (p, path), v in sa.items()]
    quads += [Quad(J, b.child(*path), Term(p), _obj(v)) for (p, path), v in sb.items()]
    s.commit(J, JS, quads)
    conflicts = {(path, p) for (p, path) in sa.keys() & sb.keys() if sa[(p, path)] != sb[(p, path)]}
    res = {k: _obj(data.draw(st.integers(0, 2))) for k in conflicts}
    dest = addr("@jonny:m")
    ab = s.merge_plan(addr("@jonny:a"), addr("@jonny:b"), res, dest=dest)
    ba = s.merge_plan(addr("@jonny:b"), addr("@jonny:a"), res, dest=dest)
    assert ab == ba


# -- blobs --------------------------------------------------------------------------------


def test_blob_round_trip_and_idempotence(tmp_path):
    s = new_store(tmp_path)
    empty = s.put_blob(b"")
    assert empty.length == 0 and s.get_blob(empty) == b""
    r1, r2 = s.put_blob(b"abc"), s.put_blob(b"abc")
    assert r1 == r2 and s.get_blob(r1) == b"abc"
    with pytest.raises(NotFound):
        s.get_blob("00" * 32)


def test_blob_corruption_detected(tmp_path):
    s = new_store(tmp_path)
    ref = s.put_blob(bytes(range(256)))
    path = s.blob_path(ref.hash)
    for i in (0, 100, 255):
        data = bytearray(path.read_bytes())
        data[i] ^= 0x04
        path.write_bytes(bytes(data))
        with pytest.raises(IntegrityError):
            s.get_blob(ref)
        data[i] ^= 0x04
        path.write_bytes(bytes(data))
    assert s.get_blob(ref) == bytes(range(256))


# -- query ------------------------------------------------------------------------------------


def test_local_query_examples():
    s = new_store()
    assert s.local_query(Pattern()) == frozenset()
    s.commit(J, JS, my_data())
    hits = s.local_query(Pattern(predicate=Term("a"), object=addr("@nwb:NWBFile")))
    assert {q.subject for q in hits} == {addr(f"@{J}:my-data")}
    assert s.local_query(Pattern()) == s.all_visible()


def test_local_query_matches_linear_scan():
    s = new_store()
    rnd = random.Random(5)
    subjects = [addr(f"@{J}:s{i}") for i in range(40)]
    preds = [Term(f"p{i}") for i in range(12)]
    objs = [Literal.integer(i) for i in range(25)] + subjects[:5]
    quads = {Quad(J, rnd.choice(subjects), rnd.choice(preds), rnd.choice(objs)) for _ in range(10_000)}
    s.commit(J, JS, quads)
    visible = s.all_visible()
    for _ in range(100):
        pat = Pattern(
            author=rnd.choice([None, J, O]),
            subject=rnd.choice([None, rnd.choice(subjects)]),
            predicate=rnd.choice([None, rnd.choice(preds)]),
            object=rnd.choice([None, rnd.choice(objs)]),
        )
        expected = {
            q
            for q in visible
            if (pat.author is None or q.author == pat.author)
            and (pat.subject is None or q.subject == pat.subject)
            and (pat.predicate is None or q.predicate == pat.predicate)
            and (pat.object is None or q.object == pat.object)
        }
        assert s.local_query(pat) == expected


# -- persistence and replay ---------------------------------------------------------------


def test_store_persists(tmp_path):
    s = new_store(tmp_path)
    s.commit(J, JS, my_data())
    ref = s.put_blob(b"payload")
    again = Store(tmp_path, handles=HANDLES)
    assert again.heads() == s.heads()
    assert again.visible(J) == my_data()
    assert again.get_blob(ref) == b"payload"
    assert again.identity(J) == JR


def test_import_log_replays_and_rejects_tampering():
    s = new_store()
    _random_log(s, random.Random(3), 8)
    t = new_store()
    assert t.import_log(s.export_log()) == 8
    assert t.visible(J) == s.visible(J)
    assert t.import_log(s.export_log()) == 0
    c = s.log(J)[0]
    forged = type(c)(c.id, c.parents, c.author, c.added | {Quad(J, addr(f"@{J}:evil"), Term("p"), _obj(1))}, c.removed, c.logical_time, c.signature)
    with pytest.raises(IntegrityError):
        new_store().verify_commit(forged)


def test_commits_are_acyclic_and_verify():
    s = new_store()
    _random_log(s, random.Random(4), 15)
    seen = set()
    for c in s.log(J):
        assert all(p in seen for p in c.parents)
        s.verify_commit(c)
        seen.add(c.id)
