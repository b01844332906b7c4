from __future__ import annotations

import math
import random

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from conftest import fixture_text, identity
from folkfed.dsl import parse_text
from folkfed.errors import CycleError, FolkError, NotFound, UsageError
from folkfed.identity import HandleTable
from folkfed.linkstore import Store
from folkfed.schema import (
    FieldDecl,
    TranslationLink,
    TypeDef,
    extends_chain,
    flatten,
    load_links,
    load_type,
    propose_merge,
    schema_diff,
    translate,
    translate_quads,
    typedef_quads,
    validate,
)
from folkfed.terms import Address, Literal, Quad, Term, parse_address
from folkfed.vocab import MERGE_OF, TRANSLATED_BY

IDS = {h: identity(h) for h in ("jonny", "nwb", "chem")}
HANDLES = HandleTable({h: r.peer_id for h, (r, _) in IDS.items()})
J = IDS["jonny"][0].peer_id

NWB_TYPES = """@base @nwb

<#NWBContainer>
  name
    a @fed:string
    required true
  ManufactureDate
    a @fed:string

<#NWBFile>
  extends @nwb:NWBContainer
  @nwb:general:experimenter
    a @fed:Person
    required true
  @nwb:ElectricalSeries
    a @nwb:ElectricalSeries
    required true
"""


def new_store() -> Store:
    return Store(identities=[r for r, _ in IDS.values()], handles=HANDLES)


def put(store: Store, who: str, text: str) -> None:
    r, s = IDS[who]
    store.commit(r.peer_id, s, parse_text(text, handles=HANDLES))


def a(text: str) -> Address:
    return parse_address(text)


@pytest.fixture
def nwb_store() -> Store:
    s = new_store()
    put(s, "nwb", NWB_TYPES)
    put(s, "jonny", fixture_text("solar-ephys.fld"))
    put(s, "jonny", fixture_text("my-data.fld"))
    return s


def test_load_solar_ephys(nwb_store):
    td = load_type(nwb_store, a("@jonny:SolarEphys"))
    assert td.extends == a(f"@{IDS['nwb'][0].peer_id}:NWBContainer")
    names = {f.name for f in td.fields}
    assert {"ManufactureDate", "InputWattageSeries", "sunIntensity"} <= names
    assert td.field_map()["InputWattageSeries"].relation == "extends"


def test_load_data_only_address_fails(nwb_store):
    with pytest.raises(NotFound):
        load_type(nwb_store, a("@jonny:my-data:ElectricalSeries"))


def test_flatten_includes_ancestors_with_shadowing(nwb_store):
    flat = flatten(nwb_store, a("@jonny:SolarEphys"))
    base = flatten(nwb_store, a("@nwb:NWBContainer"))
    for name, f in base.items():
        assert name in flat
    assert flat["ManufactureDate"].type == a("@schema:Date")  # child shadows parent
    assert flat["name"] == base["name"]


def test_flatten_without_extends_is_own_fields(nwb_store):
    td = load_type(nwb_store, a("@nwb:NWBContainer"))
    assert flatten(nwb_store, a("@nwb:NWBContainer")) == td.field_map()


def test_extends_cycle_is_reported():
    s = new_store()
    put(s, "jonny", "@base @jonny\n\n<#A>\n  extends @jonny:B\n\n<#B>\n  extends @jonny:A\n")
    with pytest.raises(CycleError) as info:
        flatten(s, a("@jonny:A"))
    assert len(info.value.cycle) >= 2


def test_validate_my_data(nwb_store):
    report = validate(nwb_store, a("@jonny:my-data"), a("@nwb:NWBFile"))
    # name is inherited as required from the container and my-data lacks it
    assert report.missing == {"name"}
    assert not report.mismatched
    # extra quads never fail
    assert all(str(q.predicate) != "name" for q in report.unknown_extras)


def test_validate_my_data_against_required_pair():
    s = new_store()
    put(s, "nwb", NWB_TYPES.split("<#NWBFile>")[0] + "<#NWBFile>\n  @nwb:general:experimenter\n    a @fed:Person\n    required true\n  @nwb:ElectricalSeries\n    a @nwb:ElectricalSeries\n    required true\n")
    put(s, "jonny", fixture_text("my-data.fld"))
    assert validate(s, a("@jonny:my-data"), a("@nwb:NWBFile")).valid


def test_empty_object_reports_missing_field(nwb_store):
    s = nwb_store
    put(s, "jonny", "@base @jonny\n\n<#T>\n  need\n    a @fed:int\n    required true\n")
    report = validate(s, a("@jonny:nothing"), a("@jonny:T"))
    assert report.missing == {"need"} and not report.valid


def test_literal_type_mismatch():
    s = new_store()
    put(s, "jonny", '@base @jonny\n\n<#T>\n  size\n    a @fed:int\n\n<#x>\n  size "big"\n')
    report = validate(s, a("@jonny:x"), a("@jonny:T"))
    assert report.mismatched == (("size", "@fed:int", "string"),)


# -- random TypeDefs -------------------------------------------------------------

FIELD_NAMES = ["alpha", "beta", "gamma", "delta", "eps"]
FIELD_TYPES = [a("@fed:string"), a("@fed:int"), a("@fed:seq")]

field_decls = st.builds(
    FieldDecl,
    st.sampled_from(FIELD_NAMES),
    st.sampled_from(FIELD_TYPES),
    st.booleans(),
)


def unique_fields(fields):
    out = {}
    for f in fields:
        out.setdefault(f.name, f)
    return tuple(out[k] for k in sorted(out))


@given(st.lists(field_decls, max_size=5), st.booleans())
def test_typedef_round_trip(fields, has_parent):
    addr = Address(J, ("T",))
    td = TypeDef(addr, Address(J, ("Base",)) if has_parent else None, unique_fields(fields))
    if td.extends is None and not td.fields:
        return
    s = new_store()
    s.commit(J, IDS["jonny"][1], typedef_quads(td, J))
    assert load_type(s, addr) == td


def _chain_store(levels):
    """Commit T0 extends T1 extends ... and return the store."""
    s = new_store()
    quads = set()
    for i, fields in enumerate(levels):
        parent = Address(J, (f"T{i + 1}",)) if i + 1 < len(levels) else None
        quads |= typedef_quads(TypeDef(Address(J, (f"T{i}",)), parent, unique_fields(fields)), J)
    if quads:
        s.commit(J, IDS["jonny"][1], quads)
    return s


@settings(max_examples=200)
@given(st.lists(st.lists(field_decls, max_size=4), min_size=1, max_size=10))
def test_flatten_matches_chain_walk(levels):
    s = _chain_store(levels)
    expected = {}
    for fields in levels:  # nearest first
        for f in unique_fields(fields):
            expected.setdefault(f.name, f)
    assert flatten(s, Address(J, ("T0",))) == dict(sorted(expected.items()))
    assert len(extends_chain(s, Address(J, ("T0",)))) == len(levels)


@settings(max_examples=100)
@given(st.lists(field_decls, min_size=1, max_size=4), st.lists(field_decls, max_size=4), st.data())
def test_validity_monotonic_under_extension(base_fields, extra_fields, data):
    base_fields = unique_fields(base_fields)
    taken = {f.name for f in base_fields}
    extra = tuple(f for f in unique_fields(extra_fields) if f.name not in taken)
    s = _chain_store([extra, base_fields])
    values = {a("@fed:string"): Literal.string("v"), a("@fed:int"): Literal.integer(3), a("@fed:seq"): Literal.seq([1])}
    obj = Address(J, ("obj",))
    quads = []
    for name in FIELD_NAMES:
        if data.draw(st.booleans()):
            t = data.draw(st.sampled_from(FIELD_TYPES))
            quads.append(Quad(J, obj, Term(name), values[t]))
    if quads:
        s.commit(J, IDS["jonny"][1], quads)
    if validate(s, obj, Address(J, ("T0",))).valid:
        assert validate(s, obj, Address(J, ("T1",))).valid


# -- translation ---------------------------------------------------------------------


def test_narrow_match_mean_from_fixture():
    s = new_store()
    put(s, "jonny", fixture_text("links-lambda.fld"))
    put(s, "jonny", "@base @jonny\n\n<#reading>\n  @acs:Spectroscopy:readings:wavelength [480, 500, 520]\n")
    links = load_links(s, a("@jonny:links:lambda"))
    assert len(links) == 1 and links[0].relation == "narrowMatch"
    out = translate(s, a("@jonny:reading"), links)
    assert links[0].target.segments == ("Fluorescence", "excitation_lambda")
    (lam,) = [q.object for q in out.quads if q.predicate == links[0].target]
    assert abs(float(lam.value) - 500.0) <= 1e-12 * 500.0
    assert any(q.predicate == TRANSLATED_BY for q in out.quads)


@given(st.lists(st.integers(-(10**6), 10**6), min_size=1, max_size=30))
def test_mean_matches_direct_arithmetic(values):
    subj = Address(J, ("r",))
    src, dst = a("@acs:w"), a("@nwb:lam")
    link = TranslationLink(src, "narrowMatch", dst, a("@math:mean"))
    out = translate_quads(subj, [Quad(J, subj, src, Literal.seq(values))], [link])
    (lam,) = [q.object for q in out if q.predicate == dst]
    expect = math.fsum(values) / len(values)
    assert abs(float(lam.value) - expect) <= 1e-12 * max(1.0, abs(expect))


def test_exact_match_round_trip():
    s = new_store()
    put(s, "jonny", fixture_text("links-super6.fld"))
    (link,) = load_links(s, a("@jonny:links:super6"))
    subj = Address(J, ("sample",))
    original = frozenset({Quad(J, subj, a("@neuro:superstar6"), Literal.integer(6)), Quad(J, subj, Term("keep"), Literal.integer(1))})
    forward = translate_quads(subj, original, [link])
    assert link.target == Address(IDS["chem"][0].peer_id, ("SUPER6",))
    assert any(q.predicate == link.target for q in forward)
    back = translate_quads(subj, forward, [link.inverse()])
    strip = lambda qs: {q for q in qs if q.predicate != TRANSLATED_BY}
    assert strip(back) == original
    # idempotent: translating twice adds nothing new
    assert translate_quads(subj, forward, [link]) == forward


def test_translate_errors_and_empty_links():
    subj = Address(J, ("r",))
    quads = frozenset({Quad(J, subj, a("@acs:w"), Literal.seq([1, 2]))})
    assert translate_quads(subj, quads, []) == quads
    with pytest.raises(UsageError):
        translate_quads(subj, quads, [TranslationLink(a("@acs:w"), "narrowMatch", a("@x:y"), a("@math:median"))])
    with pytest.raises(UsageError):
        translate_quads(subj, quads, [TranslationLink(a("@acs:w"), "narrowMatch", a("@x:y"))])
    text = frozenset({Quad(J, subj, a("@acs:w"), Literal.string("x"))})
    with pytest.raises(UsageError):
        translate_quads(subj, text, [TranslationLink(a("@acs:w"), "narrowMatch", a("@x:y"), a("@math:mean"))])


# -- diff and merge --------------------------------------------------------------------


def test_diff_examples(nwb_store):
    same = schema_diff(nwb_store, a("@jonny:SolarEphys"), a("@jonny:SolarEphys"))
    assert same.only_a == same.only_b == same.conflicting == frozenset()
    d = schema_diff(nwb_store, a("@jonny:SolarEphys"), a("@nwb:NWBContainer"))
    assert d.only_a == {"InputWattageSeries", "sunIntensity"}
    assert d.conflicting == {"ManufactureDate"}
    assert d.shared == {"name"} and d.only_b == frozenset()


def _pair_store(fa, fb):
    s = new_store()
    quads = typedef_quads(TypeDef(Address(J, ("A",)), None, unique_fields(fa)), J)
    quads |= typedef_quads(TypeDef(Address(J, ("B",)), None, unique_fields(fb)), J)
    s.commit(J, IDS["jonny"][1], quads)
    return s


pairs = st.tuples(st.lists(field_decls, min_size=1, max_size=5), st.lists(field_decls, min_size=1, max_size=5))


@settings(max_examples=100)
@given(pairs)
def test_diff_partition_matches_set_algebra(pair):
    s = _pair_store(*pair)
    ma = {f.name: f for f in unique_fields(pair[0])}
    mb = {f.name: f for f in unique_fields(pair[1])}
    d = schema_diff(s, Address(J, ("A",)), Address(J, ("B",)))
    assert d.only_a == ma.keys() - mb.keys()
    assert d.only_b == mb.keys() - ma.keys()
    assert d.shared == {n for n in ma.keys() & mb.keys() if ma[n].type == mb[n].type}
    assert d.conflicting == {n for n in ma.keys() & mb.keys() if ma[n].type != mb[n].type}
    assert d.shared | d.only_a | d.only_b | d.conflicting == ma.keys() | mb.keys()


@settings(max_examples=500)
@given(pairs, st.data())
def test_merge_is_symmetric(pair, data):
    s = _pair_store(*pair)
    A, B, dest = Address(J, ("A",)), Address(J, ("B",)), Address(J, ("M",))
    dab = schema_diff(s, A, B)
    dba = schema_diff(s, B, A)
    picks = {n: data.draw(st.sampled_from(["a", "b"])) for n in sorted(dab.conflicting)}
    swapped = {n: "b" if p == "a" else "a" for n, p in picks.items()}
    td1, prov1 = propose_merge(dab, picks, dest=dest)
    td2, prov2 = propose_merge(dba, swapped, dest=dest)
    assert td1 == td2 and prov1 == prov2
    assert {q.predicate for q in prov1} == {MERGE_OF}


def test_merge_requires_choices_and_picks_side():
    s = _pair_store([FieldDecl("x", a("@fed:int"), True)], [FieldDecl("x", a("@fed:string"), True)])
    d = schema_diff(s, Address(J, ("A",)), Address(J, ("B",)))
    with pytest.raises(UsageError):
        propose_merge(d)
    td, _ = propose_merge(d, {"x": "a"})
    assert td.field_map()["x"].type == a("@fed:int")


@settings(max_examples=100)
@given(pairs, st.data())
def test_conflict_free_merge_accepts_source_valid_objects(pair, data):
    fa, fb = unique_fields(pair[0]), unique_fields(pair[1])
    types_b = {f.name: f.type for f in fb}
    fb = tuple(f for f in fb if f.name not in {g.name for g in fa} or types_b[f.name] == next(g.type for g in fa if g.name == f.name))
    assume(fb)
    s = _pair_store(fa, fb)
    A, B, M = Address(J, ("A",)), Address(J, ("B",)), Address(J, ("M",))
    td, _ = propose_merge(schema_diff(s, A, B), dest=M)
    s.commit(J, IDS["jonny"][1], typedef_quads(td, J))
    values = {a("@fed:string"): Literal.string("v"), a("@fed:int"): Literal.integer(3), a("@fed:seq"): Literal.seq([1])}
    obj = Address(J, ("obj",))
    quads = [Quad(J, obj, Term(n), values[data.draw(st.sampled_from(FIELD_TYPES))]) for n in FIELD_NAMES if data.draw(st.booleans())]
    if quads:
        s.commit(J, IDS["jonny"][1], quads)
    ra, rb = validate(s, obj, A), validate(s, obj, B)
    # open world: an undeclared field on one side may still contradict the other side
    if (ra.valid or rb.valid) and not ra.mismatched and not rb.mismatched:
        assert validate(s, obj, M).valid


def test_random_chains_terminate_with_depth_cap():
    rnd = random.Random(0)
    s = new_store()
    quads = set()
    for i in range(70):
        quads |= typedef_quads(TypeDef(Address(J, (f"D{i}",)), Address(J, (f"D{i + 1}",)), (FieldDecl(f"f{rnd.randint(0, 3)}", a("@fed:int")),)), J)
    s.commit(J, IDS["jonny"][1], quads)
    with pytest.raises(FolkError, match="deeper than 64"):
        flatten(s, Address(J, ("D0",)))
