import pytest
from hypothesis import given, settings

from abtm.core import Parallel, Sequence, Skipper
from abtm.dsl import NodeDef, TreeDefinition, build, parse_tree, print_tree, validate
from abtm.errors import DuplicateName, ParseError, ValidationError
from abtm.expr import ActionSpec, parse_expr
from abtm.memory import Scope

from support import definitions, fixture_text


def codes(text):
    return [d.code for d in validate(parse_tree(text))]


def test_parse_pair():
    d = parse_tree("seq { cond c { S: x > 0; F: x < 0; R: default; } act a { x := 1; } }")
    assert d.root.kind == "seq" and len(d.root.children) == 2
    assert [c.kind for c in d.root.children] == ["cond", "act"]


def test_kinds():
    assert isinstance(build(parse_tree("skip { cond c { R: default; } }")).root, Skipper)
    assert isinstance(build(parse_tree("par { cond c { R: default; } }")).root, Parallel)
    assert isinstance(build(parse_tree("seq named { cond c { R: default; } }")).root, Sequence)


def test_declarations():
    d = parse_tree("input a = 2; output b; local c = -1.5; var e; input time; cond k { R: default; }")
    decls = d.declared()
    assert decls["a"].initial == 2.0 and decls["a"].scope is Scope.INPUT
    assert decls["b"].scope is Scope.OUTPUT
    assert decls["c"].local and decls["c"].initial == -1.5
    assert not decls["e"].local
    assert decls["time"].local


def test_comments_keep_positions():
    with pytest.raises(ParseError) as info:
        parse_tree("// header\nseq {\n  cond c { S: x >; R: default; }\n}")
    assert (info.value.line, info.value.column) == (3, 18)


@pytest.mark.parametrize("text", [
    "seq { cond c { S: x > 0; R: default; }",
    "cond { R: default; }",
    "input x input y; cond c { R: default; }",
    "input x; input x; cond c { R: default; }",
    "act a { x = 1; }",
    "cond c { Q: x > 0; R: default; }",
])
def test_syntax_errors(text):
    with pytest.raises(ParseError):
        parse_tree(text)


def test_duplicate_sibling_names():
    with pytest.raises(DuplicateName):
        parse_tree("seq { act a { x := 1; } act a { y := 1; } }")
    # Same name in different parents is fine.
    parse_tree("seq { sel { act a { x := 1; } } sel { act a { y := 1; } } }")


def test_missing_default():
    assert codes("cond c { S: x > 0; }") == ["MissingDefault", "Undeclared"]
    with pytest.raises(ValidationError) as info:
        build(parse_tree("cond c { S: x > 0; }"))
    assert "c" in str(info.value)


def test_empty_control_node():
    assert codes("seq { }") == ["EmptyControlNode"]


def test_reserved_write():
    # The grammar cannot spell the reserved prefix, so build the node directly.
    bad = TreeDefinition((), NodeDef("act", "a", action=ActionSpec((("__state__/0", parse_expr("1")),))))
    assert [x.code for x in validate(bad)] == ["ReservedKeyWrite"]


def test_warnings():
    diags = validate(parse_tree("input x; output y; seq { act a { x := 1; } act b { y := 1 / x; } cond c { S: 1 / y > 0; R: default; } }"))
    assert [(d.code, d.severity) for d in diags] == [
        ("AssignToInput", "warning"), ("DivisionPresent", "warning"), ("DivisionPresent", "warning")]
    build(parse_tree("input x; act a { x := 1; }"))


def test_latch_fixture_is_clean():
    assert validate(parse_tree(fixture_text("latch.abtm"))) == []


def test_build_declares_memory():
    t = build(parse_tree("input a = 2; output b; local c; cond k { S: a > 1; R: default; }"))
    assert t.memory.get("a") == 2.0
    assert t.memory.scope("b") is Scope.OUTPUT
    assert t.memory.is_local("c")
    assert t.root.state.name == "R"
    assert "__state__/0" in t.memory


def test_print_is_canonical():
    text = fixture_text("latch.abtm")
    once = print_tree(parse_tree(text))
    assert parse_tree(once) == parse_tree(text)
    assert print_tree(parse_tree(once)) == once


def test_print_keeps_negative_initials():
    d = parse_tree("input a = -0; input b = -2; cond c { R: default; }")
    again = parse_tree(print_tree(d))
    assert [str(x.initial) for x in again.declarations] == ["-0.0", "-2.0"]


@settings(max_examples=100, deadline=None)
@given(definitions())
def test_print_parse_fixed_point(definition):
    text = print_tree(definition)
    assert parse_tree(text) == definition
    assert print_tree(parse_tree(text)) == text
    assert build(parse_tree(text)).hash() == build(definition).hash()
