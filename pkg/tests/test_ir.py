import pytest
from hypothesis import given

from daecc.ir import IRError, parse_program, print_function, print_program, to_dot, validate
from daecc.kernels import SOURCES, load

from conftest import programs

DIAMOND_LOOP = """
array @A[8]
func @f(%N) {
E:
  br H
H:
  %i = phi [0, E], [%i1, L]
  %c = icmp lt %i, %N
  condbr %c, B, X
B:
  %x = load @A[%i]
  condbr %x, T, L
T:
  store @A[%i], 1
  br L
L:
  %i1 = add %i, 1
  br H
X:
  ret
}
"""


def test_minimal_function():
    p = parse_program("func @f() { e: ret }")
    assert [b.id for b in p.function().blocks] == ["e"]
    assert validate(p) == []


def test_three_source_loop_shape(fig5):
    ids = [b.id for b in fig5.blocks]
    assert set("1234567") | {"H", "L"} <= set(ids)
    assert len(ids) == 11  # plus entry E and exit X


def test_duplicate_definition():
    text = "func @f() {\nE:\n  %x = add 1, 2\n  %x = add 1, 3\n  ret\n}"
    with pytest.raises(IRError, match="duplicate SSA definition"):
        parse_program(text)
    assert any("duplicate SSA definition" in d for d in validate(parse_program(text, check=False)))


def test_irreducible_rejected():
    text = """func @f(%c) {
E:
  condbr %c, A, B
A:
  br B
B:
  br A
}"""
    assert any("irreducible" in d for d in validate(parse_program(text, check=False)))


def test_two_latches_rejected():
    text = """func @f(%c) {
E:
  br H
H:
  condbr %c, A, B
A:
  br H
B:
  br H
}"""
    assert any("non-canonical loop" in d for d in validate(parse_program(text, check=False)))


@pytest.mark.parametrize("name", sorted(SOURCES))
def test_roundtrip_kernels(name):
    once = print_program(load(name))
    assert print_program(parse_program(once)) == once
    assert validate(load(name)) == []


def test_hist_block_order():
    ids = [b.id for b in load("hist").function().blocks]
    assert ids.index("H") < ids.index("B") < ids.index("L")


@given(programs)
def test_roundtrip_generated(prog):
    text = print_program(prog)
    again = parse_program(text)
    assert print_program(again) == text
    assert validate(again) == []


def test_dot_counts(fig5):
    dot = to_dot(fig5)
    nodes = [l for l in dot.splitlines() if "[label=" in l]
    edges = [l for l in dot.splitlines() if "->" in l]
    assert len(nodes) == 11
    assert len(edges) == 16
    assert any('"L" -> "H"' in e and "dashed" in e for e in edges)


def test_dot_single_block():
    dot = to_dot(parse_program("func @f() { e: ret }").function())
    assert dot.count("[label=") == 1 and "->" not in dot


def test_dot_spec_overlay(fig5):
    from daecc.pipeline import compile_function
    c = compile_function(fig5)
    dot = to_dot(fig5, c.smap)
    line = next(l for l in dot.splitlines() if l.startswith('  "2" [label='))
    assert "spec: b,e" in line


def test_print_empty_body():
    f = parse_program("func @f() { e: ret }").function()
    assert print_function(f).count(":") == 1


def test_diamond_loop_valid():
    assert validate(parse_program(DIAMOND_LOOP)) == []
