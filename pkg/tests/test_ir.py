import json
from pathlib import Path

import networkx as nx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pactight import MachineConfig, bundled, run
from pactight.ir import (AlreadyInstrumented, CycleError, InstrumentOptions, InstrumentReport, Level,
                         ParseError, classify_sensitive, emit_stats, format_program, instrument,
                         insertion_sites, parse_program, pointer_class)
from pactight.ir.sexpr import read_all, write
from pactight.ir.types import TypeTable, parse_type

GOLDEN = Path(__file__).parent / "golden"
PCT = ("pct_add_tag", "pct_sign", "pct_auth", "pct_rm_tag")


def pct_ops(prog, fn="main"):
    return [i.op for i in prog.function(fn).body if i.op.startswith("pct_")]


# -- s-expressions and parsing ---------------------------------------------

def test_reader_atoms_and_comments():
    assert read_all("(a 1 -2 0x10 @f %r) ; tail") == [["a", 1, -2, 16, "@f", "%r"]]
    assert write(["a", ["b", 3]]) == "(a (b 3))"


@pytest.mark.parametrize("text", ["(a (b)", "(a))", "(func main () (bogus %x))",
                                  "(func f () (ret 0))", "(func main () (br nowhere))",
                                  "(func main () (call @missing))", "(type)"])
def test_parse_errors(text):
    with pytest.raises(ParseError):
        parse_program(text)


@pytest.mark.parametrize("text", ["(type A (struct (x A)))", "(type A B) (type B A)"])
def test_by_value_cycles_rejected(text):
    with pytest.raises(CycleError):
        parse_program(text + "(func main () (ret 0))")


def test_self_reference_through_pointer_is_fine():
    p = parse_program("(type Node (struct (next (ptr Node)) (cb funcptr))) (func main () (ret 0))")
    smap = classify_sensitive(p.types, "cpi")
    assert smap.sensitive_types() == ["Node"]


@pytest.mark.parametrize("name", bundled.program_names())
def test_format_round_trip(name):
    prog = bundled.load(name)
    text = format_program(prog)
    again = parse_program(text, name)
    assert format_program(again) == text
    if prog.instrumented is None:
        inst = format_program(instrument(prog))
        assert format_program(parse_program(inst)) == inst


# -- sensitivity against an independent reachability oracle ---------------

def oracle_sensitive(named: dict, level: str) -> set:
    """Graph reachability over raw s-expression type definitions."""
    g = nx.DiGraph()
    code = "<code>"
    g.add_node(code)

    def visit(node, expr):
        if isinstance(expr, str):
            if expr == "funcptr":
                g.add_edge(node, code)
            elif expr in named:
                g.add_edge(node, expr)
            return
        head = expr[0]
        if head == "ptr":
            if level == "cpi":
                visit(node, expr[1])
        elif head == "array":
            visit(node, expr[1])
        elif head == "union":
            for m in expr[1:]:
                visit(node, m)
                if level == "cpi" and m == "voidptr":
                    g.add_edge(node, code)
        elif head == "vptr":
            if level != "cfi":
                g.add_edge(node, code)
        elif head in ("struct", "class"):
            if head == "class" and level != "cfi":
                g.add_edge(node, code)
            for item in expr[1:]:
                if item[0] not in ("methods", "extends"):
                    visit(node, item[1])

    for name, expr in named.items():
        g.add_node(name)
        visit(name, expr)
    return {n for n in named if nx.has_path(g, n, code)}


@st.composite
def type_tables(draw):
    n = draw(st.integers(1, 7))
    names = [f"T{i}" for i in range(n)]

    def texpr(i, depth):
        # by-value references only point backwards, pointers may point anywhere
        leaves = ["int", "funcptr", "voidptr"] + names[:i]
        if depth == 0:
            return draw(st.sampled_from(leaves))
        kind = draw(st.sampled_from(["leaf", "ptr", "array", "struct", "union", "class"]))
        if kind == "leaf":
            return draw(st.sampled_from(leaves))
        if kind == "ptr":
            return ["ptr", draw(st.sampled_from(names + ["int", "funcptr"]))]
        if kind == "array":
            return ["array", texpr(i, depth - 1), draw(st.integers(1, 4))]
        if kind == "union":
            return ["union"] + [texpr(i, depth - 1) for _ in range(draw(st.integers(1, 3)))]
        fields = [[f"f{k}", texpr(i, depth - 1)] for k in range(draw(st.integers(1, 3)))]
        if kind == "class":
            return ["class", ["methods", "@m"]] + fields
        return ["struct"] + fields

    return {name: texpr(i, 2) for i, name in enumerate(names)}


@given(type_tables(), st.sampled_from(["cfi", "vtable", "cpi"]))
@settings(max_examples=300, deadline=None)
def test_classification_matches_reachability(named, level):
    table = TypeTable({k: parse_type(v) for k, v in named.items()})
    smap = classify_sensitive(table, level)
    assert set(smap.sensitive_types()) == oracle_sensitive(named, level)


@given(type_tables())
@settings(max_examples=100, deadline=None)
def test_classification_is_monotone_in_level(named):
    table = TypeTable({k: parse_type(v) for k, v in named.items()})
    cfi, vt, cpi = (set(classify_sensitive(table, l).sensitive_types()) for l in ("cfi", "vtable", "cpi"))
    assert cfi <= vt <= cpi


def test_level_parse():
    assert Level.parse("VTable") is Level.VTABLE
    with pytest.raises(ValueError):
        Level.parse("full")


def test_pointer_class():
    p = parse_program("(type H funcptr) (type U (union funcptr int)) (type D (ptr int))"
                      "(func main () (ret 0))")
    assert [pointer_class(parse_type(n), p.types) for n in ("H", "U", "D")] == ["function", "function", "data"]


# -- instrumentation ------------------------------------------------------

def test_running_example_matches_golden():
    out = instrument(bundled.load("running_example"), level="cpi")
    assert format_program(out).strip() == (GOLDEN / "running_example.cpi.ir").read_text().strip()
    assert pct_ops(out) == ["pct_add_tag", "pct_sign", "pct_sign", "pct_auth", "pct_sign", "pct_rm_tag"]


def test_array_bounds_trace_matches_golden():
    golden = json.loads((GOLDEN / "array_bounds.json").read_text())
    report = run(instrument(bundled.load("array_bounds")), MachineConfig(seed=11))
    assert [e["kind"] for e in report.events] == golden["event_kinds"]
    assert [e["ok"] for e in report.events if e["kind"] == "pct_auth"] == golden["auth_ok"]
    base = int(report.events[0]["address"], 16)
    size = golden["element_size"]
    assert [(o - base) // size for o in report.outputs] == golden["authenticated_offsets"]
    (abort,) = report.aborts
    assert abort["reason"] == golden["abort"]["reason"]
    assert int(abort["address"], 16) == base + golden["abort"]["element_offset"] * size


def test_instrumenting_twice_rejected():
    once = instrument(bundled.load("running_example"))
    with pytest.raises(AlreadyInstrumented):
        instrument(once)
    with pytest.raises(AlreadyInstrumented):
        instrument(parse_program(format_program(once)))


def test_unknown_ret_mode_rejected():
    with pytest.raises(ValueError):
        instrument(bundled.load("running_example"), opts=InstrumentOptions(ret_mode="shadow"))


@pytest.mark.parametrize("name", bundled.corpus_names())
def test_insertion_sites_monotone(name):
    prog = bundled.load(name)
    cfi, vt, cpi = (insertion_sites(instrument(prog, level=l)) for l in ("cfi", "vtable", "cpi"))
    assert cfi <= vt <= cpi


def test_universal_pointer_resolved_by_cast():
    report = InstrumentReport()
    out = instrument(bundled.load("c05_void_cast"), report=report)
    assert report.resolved_universal == {("main", "%slot"): "CtxPtr"}
    assert not report.unresolved_universal
    assert "pct_sign" in pct_ops(out)


def test_universal_pointer_without_cast_is_conservative():
    src = """
    (func g () (ret 1))
    (func main ()
      (alloca %slot voidptr)
      (store %slot @g voidptr)
      (alloca %plain voidptr)
      (store %plain 0 voidptr)
      (ret 0))
    """
    report = InstrumentReport()
    out = instrument(parse_program(src), report=report)
    assert report.unresolved_universal == [("main", "%slot")]
    signed = [i.args[0] for i in out.function("main").body if i.op == "pct_sign"]
    assert signed == ["%slot"]


def test_non_escaping_alloca_is_not_tagged():
    src = """
    (type H funcptr)
    (type Box (struct (h H)))
    (func f () (ret 0))
    (func main ()
      (alloca %b Box)
      (field %c %b Box h)
      (store %c @f H)
      (ret 0))
    """
    out = instrument(parse_program(src))
    assert "pct_add_tag" not in pct_ops(out)
    assert "pct_rm_tag" not in pct_ops(out)


def test_ovwrt_replaces_reseal_with_restore():
    prog = bundled.load("loop_bench")
    plain, ovwrt = instrument(prog), instrument(prog, opts=InstrumentOptions(ovwrt=True))
    a, b = emit_stats(plain), emit_stats(ovwrt)
    assert b.pct_auth == a.pct_auth
    assert b.pct_sign < a.pct_sign
    assert b.ovwrt_restore == a.pct_sign - b.pct_sign


def test_stats_protected_percentages():
    s = emit_stats(instrument(bundled.load("running_example")))
    assert s.counts() == {"pct_add_tag": 1, "pct_sign": 3, "pct_auth": 1, "pct_rm_tag": 1}
    d = s.to_dict()
    assert 0 <= d["protected_load_pct"] <= 100 and 0 <= d["protected_store_pct"] <= 100
    assert s.protected_loads == 1
