from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import all_paths, fixed_point_closure
from sgxsupply.registry import (
    BUCKETS,
    ClosureHistogram,
    CycleDetected,
    DuplicateName,
    InvalidRecord,
    PackageRecord,
    RegistryGraph,
    Status,
    TopNOutOfRange,
    UnknownPackage,
    UnresolvedDependency,
    admission_check,
    bucket_label,
    category_tally,
    closure_histogram,
    coverage_report,
    find_dependents,
    load_manifests,
    load_registry,
    parse_name_list,
    port_closure,
)


def pkg(name, deps=(), status="candidate", is_meta=False, category=""):
    return {"name": name, "deps": list(deps), "status": status, "is_meta": is_meta, "category": category}


def graph(*records):
    return load_registry({"packages": list(records)})


def test_minimal_graph():
    g = graph(pkg("A", ["B"]), pkg("B"))
    assert len(g) == 2
    assert g.edge_count == 1
    assert g.topological_order() == ["B", "A"]


def test_two_cycle_reports_path():
    with pytest.raises(CycleDetected) as err:
        graph(pkg("A", ["B"]), pkg("B", ["A"]))
    assert err.value.path == ["A", "B", "A"]


def test_dangling_edge():
    with pytest.raises(UnresolvedDependency) as err:
        graph(pkg("A", ["X"]))
    assert err.value.name == "X"


def test_duplicate_name():
    with pytest.raises(DuplicateName):
        graph(pkg("A"), pkg("A"))


def test_meta_must_be_directly_usable():
    with pytest.raises(InvalidRecord):
        PackageRecord.from_dict(pkg("m", status="candidate", is_meta=True))


def test_bad_status_names_field():
    with pytest.raises(InvalidRecord) as err:
        graph(pkg("A", status="shipped"))
    assert err.value.field == "status"


def test_load_from_json_text():
    g = load_registry(json.dumps({"packages": [pkg("A")]}))
    assert "A" in g


def test_closure_leaf_is_empty():
    assert port_closure(graph(pkg("A")), "A") == set()


def test_closure_skips_meta_but_traverses_it():
    g = graph(pkg("A", ["B"]), pkg("B", ["C"], "directly_usable", is_meta=True), pkg("C"))
    assert port_closure(g, "A") == {"C"}


def test_closure_diamond():
    g = graph(pkg("A", ["B", "C"]), pkg("B", ["C"]), pkg("C"))
    assert port_closure(g, "A") == {"B", "C"}
    paths = all_paths({"A": ["B", "C"], "B": ["C"], "C": []}, "A", "C")
    assert sorted(map(len, paths)) == [2, 3]


def test_closure_unknown_root():
    with pytest.raises(UnknownPackage):
        port_closure(graph(pkg("A")), "Z")


def test_bucket_edges():
    assert [bucket_label(n) for n in (0, 5, 6, 10, 11, 20, 21, 99)] == [
        "0", "5", "6-10", "6-10", "11-20", "11-20", ">=21", ">=21",
    ]


def test_histogram_from_sizes():
    h = ClosureHistogram.from_sizes([0, 0, 1, 5, 12, 25])
    assert {k: v for k, v in h.buckets.items() if v} == {"0": 2, "1": 1, "5": 1, "11-20": 1, ">=21": 1}
    assert h.total == 6


def test_histogram_empty_roots():
    h = closure_histogram(graph(pkg("A")), [])
    assert list(h.buckets) == list(BUCKETS)
    assert all(v == 0 for v in h.buckets.values())


def test_coverage_empty_window():
    report = coverage_report(graph(pkg("A")), ["A"], 0)
    assert report.total == 0 and report.availability_rate == 0


def test_coverage_out_of_range():
    with pytest.raises(TopNOutOfRange):
        coverage_report(graph(pkg("A")), ["A"], 2)


def test_coverage_unknown_name():
    with pytest.raises(UnknownPackage):
        coverage_report(graph(pkg("A")), ["Q"], 1)


def test_tally_cases():
    assert category_tally(graph(pkg("A"))) == {}
    g = graph(pkg("A", status="ported", category="Crypto"), pkg("B", status="ported", category="Crypto"))
    assert category_tally(g) == {"Crypto": 2}


def test_fixture_tables(fixture_graph, ported_names):
    hist = closure_histogram(fixture_graph, ported_names)
    assert hist.total == 159
    tally = category_tally(fixture_graph)
    assert sum(tally.values()) == 159 and len(tally) == 22


MANIFESTS = "\n".join(
    json.dumps(m)
    for m in [
        {"id": "p1", "manifest_text": 'rustls = { git = "https://example.org/org-keyword/rustls" }',
         "has_description": True, "has_docs": True, "active_commits": True, "is_educational": False},
        {"id": "p2", "manifest_text": 'ring = { git = "https://example.org/org-keyword/ring" }',
         "has_description": True, "has_docs": True, "active_commits": True, "is_educational": True},
        {"id": "p3", "manifest_text": 'serde = "1"',
         "has_description": True, "has_docs": True, "active_commits": True},
    ]
)


def test_find_dependents():
    manifests = load_manifests(MANIFESTS)
    assert find_dependents(manifests, "org-keyword") == ["p1"]
    assert find_dependents(manifests, "no-such-org") == []
    with pytest.raises(ValueError):
        find_dependents(manifests, "")


def test_manifest_bad_line():
    with pytest.raises(InvalidRecord):
        load_manifests("{not json")


def test_admission():
    all4 = dict.fromkeys(("widely_demanded", "high_quality", "api_stable", "irreplaceable_dependency"), True)
    assert (admission_check(all4).score, admission_check(all4).admitted_hint) == (4, True)
    assert (admission_check({}).score, admission_check({}).admitted_hint) == (0, False)
    two = admission_check({"irreplaceable_dependency": True, "high_quality": True})
    assert (two.score, two.admitted_hint) == (2, True)


def test_parse_name_list():
    assert parse_name_list('["a", "b"]') == ["a", "b"]
    assert parse_name_list("a, b\nc") == ["a", "b", "c"]


@st.composite
def random_dag(draw):
    n = draw(st.integers(1, 50))
    names = [f"n{i:02d}" for i in range(n)]
    records = []
    for i, name in enumerate(names):
        deps = draw(st.lists(st.sampled_from(names[:i]), unique=True, max_size=4)) if i else []
        status = draw(st.sampled_from(["ported", "directly_usable", "inapplicable", "candidate"]))
        is_meta = status == "directly_usable" and draw(st.booleans())
        records.append(pkg(name, deps, status, is_meta, category=draw(st.sampled_from("xyz"))))
    return records


@settings(max_examples=150, deadline=None)
@given(random_dag())
def test_closure_matches_fixed_point(records):
    g = graph(*records)
    deps = {r["name"]: r["deps"] for r in records}
    skip = {r["name"] for r in records if r["is_meta"] or r["status"] == "directly_usable"}
    order = g.topological_order()
    pos = {n: i for i, n in enumerate(order)}
    assert all(pos[d] < pos[n] for n in deps for d in deps[n])
    for r in records:
        closure = port_closure(g, r["name"])
        assert closure == fixed_point_closure(deps, skip, r["name"])
        assert r["name"] not in closure
        assert not any(g[c].is_meta for c in closure)


@settings(max_examples=100, deadline=None)
@given(random_dag(), st.data())
def test_report_invariants(records, data):
    g = graph(*records)
    names = [r["name"] for r in records]
    ranked = data.draw(st.permutations(names))
    top = data.draw(st.integers(0, len(ranked)))
    rep = coverage_report(g, ranked, top)
    assert rep.ported + rep.directly_usable + rep.inapplicable + rep.not_ported == top
    assert 0 <= rep.availability_rate <= 1
    assert closure_histogram(g, names).total == len(names)
    assert sum(category_tally(g).values()) == sum(r["status"] == "ported" for r in records)


def test_registry_graph_is_readonly():
    g = RegistryGraph([PackageRecord("A")])
    with pytest.raises(TypeError):
        g.packages["B"] = PackageRecord("B")
    assert g["A"].status is Status.CANDIDATE
