import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from abtm.errors import DivideByZero, ParseError
from abtm.expr import (
    ActionSpec,
    And,
    BinOp,
    Compare,
    ConditionSpec,
    Neg,
    Not,
    Num,
    Or,
    Var,
    compile_action,
    compile_condition,
    compile_expr,
    deps,
    eval_condition,
    evaluate,
    parse_expr,
    pretty,
    run_action,
)
from abtm.memory import Memory, Scope
from abtm.states import NodeState


def mem(**values):
    m = Memory()
    for k, v in values.items():
        m.declare(k, initial=v)
    return m


def test_parse_simple_comparisons():
    assert parse_expr("x > 0") == Compare(">", Var("x"), Num(0.0))
    assert parse_expr("dist < 1.0") == Compare("<", Var("dist"), Num(1.0))


def test_single_equals_is_comparison():
    assert parse_expr("sub = 1 and mem = 1") == parse_expr("sub == 1 and mem == 1")


def test_precedence():
    assert parse_expr("1 + 2 * 3") == BinOp("+", Num(1.0), BinOp("*", Num(2.0), Num(3.0)))
    assert parse_expr("a or b and c") == Or(Var("a"), And(Var("b"), Var("c")))
    assert parse_expr("not a < b") == Not(Compare("<", Var("a"), Var("b")))
    assert parse_expr("-x * y") == BinOp("*", Neg(Var("x")), Var("y"))
    assert parse_expr("a - b - c") == BinOp("-", BinOp("-", Var("a"), Var("b")), Var("c"))


def test_whitespace_insensitive():
    assert parse_expr("x>0") == parse_expr("  x   >\n0 ")


@pytest.mark.parametrize("text,offset", [("x > 0 and", 9), ("(x", 2), ("x ? 1", 2), ("1e5", 0), ("x := 1", 2)])
def test_syntax_errors(text, offset):
    with pytest.raises(ParseError) as info:
        parse_expr(text)
    assert info.value.offset == offset
    assert info.value.expected


def test_eval_examples():
    assert evaluate(parse_expr("x > 0"), mem(x=1.0)) == 1.0
    assert evaluate(parse_expr("x > 0"), mem(x=0.0)) == 0.0
    assert evaluate(parse_expr("2 and 3"), mem()) == 1.0
    with pytest.raises(DivideByZero):
        evaluate(parse_expr("1/ (x - x)"), mem(x=4.0))


def test_missing_variable_reads_zero():
    m = Memory()
    assert evaluate(parse_expr("ghost + 1"), m) == 1.0
    assert m.scope("ghost") is Scope.INPUT


def test_deps():
    assert deps(parse_expr("x > 0")) == {"x"}
    assert deps(parse_expr("sub = 1 and mem = 1")) == {"sub", "mem"}
    assert deps(parse_expr("3.0 + 4.0")) == frozenset()


FIG2 = ConditionSpec(((parse_expr("x > 0"), NodeState.S), (parse_expr("x < 0"), NodeState.F), (None, NodeState.R)))
RED = ConditionSpec(((parse_expr("is_red == 1"), NodeState.S), (None, NodeState.F)))


def test_eval_condition():
    assert eval_condition(FIG2, mem(x=1.0)) is NodeState.S
    assert eval_condition(FIG2, mem(x=0.0)) is NodeState.R
    assert eval_condition(FIG2, mem(x=-3.0)) is NodeState.F
    assert eval_condition(RED, mem(is_red=0.0)) is NodeState.F


def test_condition_problems():
    assert ConditionSpec(((parse_expr("x > 0"), NodeState.S),)).problems() == ["missing default rule"]
    twice = ConditionSpec(((parse_expr("x > 0"), NodeState.S), (parse_expr("x > 1"), NodeState.S), (None, NodeState.R)))
    assert twice.problems() == ["more than one rule for the same result"]
    early = ConditionSpec(((None, NodeState.R), (parse_expr("x > 0"), NodeState.S)))
    assert early.problems() == ["default rule is not last"]


def test_run_action():
    m = mem(land=0.0)
    assert run_action(ActionSpec((("land", parse_expr("1")),)), m) == {"land"}
    m = mem(mem=0.0, sub=0.0)
    assert run_action(ActionSpec((("mem", parse_expr("1")), ("sub", parse_expr("2")))), m) == {"mem", "sub"}
    m = mem(x=1.0)
    assert run_action(ActionSpec((("x", parse_expr("1")),)), m) == set()


def test_action_sees_earlier_assignments():
    spec = ActionSpec((("a", parse_expr("b + 1")), ("b", parse_expr("a * 10"))))
    m = mem(a=0.0, b=0.0)
    run_action(spec, m)
    assert (m.get("a"), m.get("b")) == (1.0, 10.0)
    m = mem(a=0.0, b=0.0)
    compile_action(spec)(m)
    assert (m.get("a"), m.get("b")) == (1.0, 10.0)


def test_action_keeps_prefix_on_division_error():
    spec = ActionSpec((("a", parse_expr("5")), ("b", parse_expr("1 / z"))))
    for runner in (lambda m: run_action(spec, m), compile_action(spec)):
        m = mem(a=0.0, b=7.0)
        with pytest.raises(DivideByZero):
            runner(m)
        assert (m.get("a"), m.get("b")) == (5.0, 7.0)


def test_compiled_increment_runs_once_with_undeclared_read():
    m = Memory()
    compile_action(ActionSpec((("n", parse_expr("n + 1")),)))(m)
    assert m.get("n") == 1.0


def test_condition_is_side_effect_free():
    m = mem(x=2.0)
    m.declare("out", Scope.OUTPUT)
    before = m.canonical_snapshot()
    eval_condition(FIG2, m)
    compile_condition(FIG2)(m)
    assert m.canonical_snapshot() == before
    assert not m.dirty and not m.output_log


# -- properties ------------------------------------------------------------

names = st.sampled_from(["a", "b", "c"])
literals = st.sampled_from([0.0, 0.5, 1.0, 2.0, 3.25, 10.0])


def exprs():
    leaves = st.one_of(literals.map(Num), names.map(Var))

    def extend(inner):
        return st.one_of(
            inner.map(Neg),
            inner.map(Not),
            st.tuples(st.sampled_from("+-*/"), inner, inner).map(lambda t: BinOp(*t)),
            st.tuples(st.sampled_from(["==", "!=", "<", ">", "<=", ">="]), inner, inner).map(lambda t: Compare(*t)),
            st.tuples(inner, inner).map(lambda t: And(*t)),
            st.tuples(inner, inner).map(lambda t: Or(*t)),
        )

    return st.recursive(leaves, extend, max_leaves=8)


env = st.fixed_dictionaries({k: st.sampled_from([-2.0, -0.0, 0.0, 1.0, 2.5]) for k in "abc"})


def outcome(fn):
    try:
        value = fn()
    except DivideByZero:
        return "div0"
    return "nan" if math.isnan(value) else repr(value)


@given(exprs())
def test_pretty_roundtrip(e):
    assert parse_expr(pretty(e)) == e
    assert pretty(parse_expr(pretty(e))) == pretty(e)


@given(exprs(), env)
def test_compiled_matches_interpreter(e, values):
    m = Memory()
    m.set(values)
    assert outcome(lambda: compile_expr(e)(m)) == outcome(lambda: evaluate(e, m))


@given(exprs(), env, env)
def test_deps_soundness(e, first, second):
    # Memories agreeing on deps(e) give the same result.
    merged = {k: (first[k] if k in deps(e) else second[k]) for k in first}
    m1, m2 = Memory(), Memory()
    m1.set(first)
    m2.set(merged)
    assert outcome(lambda: evaluate(e, m1)) == outcome(lambda: evaluate(e, m2))
