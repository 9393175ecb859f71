"""Expression language for Condition guards and Action assignments.

Grammar, loosest binding first::

    expr    := or
    or      := and { "or" and }
    and     := not { "and" not }
    not     := [ "not" ] cmp
    cmp     := sum [ ("=="|"="|"!="|"<"|">"|"<="|">=") sum ]
    sum     := term { ("+"|"-") term }
    term    := factor { ("*"|"/") factor }
    factor  := NUMBER | IDENT | "-" factor | "(" expr ")"

Comparisons and logical operators yield 1.0 or 0.0; any nonzero value is
true.  ``=`` is accepted as an alias for ``==``.

Two evaluation routes exist.  :func:`evaluate` walks the tree and is the
reference; :func:`compile_expr` turns an expression into a Python function
over the raw value dict and is what the engine runs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal
from typing import Callable, Optional, Union

from .errors import DivideByZero, ParseError, ReservedKey
from .memory import STATE_PREFIX, Memory
from .states import NodeState

KEYWORDS = frozenset({"and", "or", "not"})
COMPARE_OPS = ("==", "!=", "<", ">", "<=", ">=")


# -- AST -----------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    key: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Compare:
    op: str  # one of COMPARE_OPS, "=" already normalized to "=="
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Not:
    operand: "Expr"


@dataclass(frozen=True)
class And:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Or:
    left: "Expr"
    right: "Expr"


Expr = Union[Num, Var, Neg, BinOp, Compare, Not, And, Or]


# -- tokenizer -----------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>[0-9]+(?:\.[0-9]+)?(?![0-9A-Za-z_.]))
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>:=|==|!=|<=|>=|[-+*/()<>=;:{}])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # "number", "ident", "op", "kw", "eof"
    text: str
    offset: int


def tokenize(text: str, offset: int = 0, end: Optional[int] = None) -> list[Token]:
    """Split ``text[offset:end]`` into tokens; offsets are absolute."""
    end = len(text) if end is None else end
    tokens = []
    pos = offset
    while pos < end:
        m = _TOKEN_RE.match(text, pos, end)
        if m is None:
            if text[pos].isdigit():
                raise ParseError("malformed number", pos, "digits [. digits] without exponent")
            raise ParseError(f"unexpected character {text[pos]!r}", pos, "number, identifier or operator")
        kind = m.lastgroup
        if kind != "ws":
            tok = m.group()
            if kind == "ident" and tok in KEYWORDS:
                kind = "kw"
            tokens.append(Token(kind, tok, pos))
        pos = m.end()
    tokens.append(Token("eof", "", end))
    return tokens


# -- parser --------------------------------------------------------------


class ExprParser:
    """Recursive-descent parser over a token list.

    Shared with the tree-file parser, which hands over a token stream and
    reads expressions out of it.
    """

    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    @property
    def current(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def at(self, text: str) -> bool:
        tok = self.current
        return tok.kind in ("op", "kw") and tok.text == text

    def fail(self, expected: str) -> ParseError:
        tok = self.current
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        return ParseError(f"unexpected {found}", tok.offset, expected)

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise self.fail(repr(text))
        return self.advance()

    def parse_or(self) -> Expr:
        node = self.parse_and()
        while self.at("or"):
            self.advance()
            node = Or(node, self.parse_and())
        return node

    def parse_and(self) -> Expr:
        node = self.parse_not()
        while self.at("and"):
            self.advance()
            node = And(node, self.parse_not())
        return node

    def parse_not(self) -> Expr:
        if self.at("not"):
            self.advance()
            return Not(self.parse_cmp())
        return self.parse_cmp()

    def parse_cmp(self) -> Expr:
        left = self.parse_sum()
        tok = self.current
        if tok.kind == "op" and (tok.text in COMPARE_OPS or tok.text == "="):
            self.advance()
            op = "==" if tok.text == "=" else tok.text
            return Compare(op, left, self.parse_sum())
        return left

    def parse_sum(self) -> Expr:
        node = self.parse_term()
        while self.at("+") or self.at("-"):
            op = self.advance().text
            node = BinOp(op, node, self.parse_term())
        return node

    def parse_term(self) -> Expr:
        node = self.parse_factor()
        while self.at("*") or self.at("/"):
            op = self.advance().text
            node = BinOp(op, node, self.parse_factor())
        return node

    def parse_factor(self) -> Expr:
        tok = self.current
        if tok.kind == "number":
            self.advance()
            return Num(float(tok.text))
        if tok.kind == "ident":
            self.advance()
            return Var(tok.text)
        if self.at("-"):
            self.advance()
            return Neg(self.parse_factor())
        if self.at("("):
            self.advance()
            node = self.parse_or()
            self.expect(")")
            return node
        raise self.fail("number, identifier, '-' or '('")


def parse_expr(text: str) -> Expr:
    parser = ExprParser(tokenize(text))
    node = parser.parse_or()
    if parser.current.kind != "eof":
        raise parser.fail("end of input")
    return node


# -- printing ------------------------------------------------------------

# Binding strength of each node kind; atoms bind tightest.
_PREC = {Or: 1, And: 2, Not: 3, Compare: 4}


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return 5 if e.op in "+-" else 6
    if isinstance(e, Neg):
        return 7
    return _PREC.get(type(e), 8)


def format_number(value: float) -> str:
    if value != value or value in (float("inf"), float("-inf")):
        raise ValueError(f"{value!r} has no literal form")
    text = format(Decimal(repr(abs(value))), "f")
    if "." not in text:
        text += ".0"
    return "-" + text if value < 0 or (value == 0 and repr(value).startswith("-")) else text


def pretty(e: Expr) -> str:
    """Render ``e`` with the fewest parentheses that parse back to ``e``."""

    def wrap(child: Expr, min_prec: int) -> str:
        text = pretty(child)
        return f"({text})" if _prec(child) < min_prec else text

    if isinstance(e, Num):
        text = format_number(e.value)
        return f"({text})" if text.startswith("-") else text
    if isinstance(e, Var):
        return e.key
    if isinstance(e, Neg):
        return "-" + wrap(e.operand, 7)
    if isinstance(e, BinOp):
        p = _prec(e)
        return f"{wrap(e.left, p)} {e.op} {wrap(e.right, p + 1)}"
    if isinstance(e, Compare):
        return f"{wrap(e.left, 5)} {e.op} {wrap(e.right, 5)}"
    if isinstance(e, Not):
        return "not " + wrap(e.operand, 4)
    if isinstance(e, And):
        return f"{wrap(e.left, 2)} and {wrap(e.right, 3)}"
    if isinstance(e, Or):
        return f"{wrap(e.left, 1)} or {wrap(e.right, 2)}"
    raise TypeError(f"not an expression: {e!r}")


# -- reference evaluation ------------------------------------------------


def deps(e: Expr) -> frozenset[str]:
    """Variable keys referenced by ``e``."""
    out: set[str] = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, Var):
            out.add(node.key)
        elif isinstance(node, (Neg, Not)):
            stack.append(node.operand)
        elif isinstance(node, (BinOp, Compare, And, Or)):
            stack.append(node.left)
            stack.append(node.right)
    return frozenset(out)


_CMP = {
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    ">": lambda a, b: a > b,
    "<=": lambda a, b: a <= b,
    ">=": lambda a, b: a >= b,
}


def evaluate(e: Expr, m: Memory) -> float:
    """Tree-walking evaluator; the reference semantics."""
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return m.get(e.key)
    if isinstance(e, Neg):
        return -evaluate(e.operand, m)
    if isinstance(e, BinOp):
        a = evaluate(e.left, m)
        b = evaluate(e.right, m)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if b == 0.0:
            raise DivideByZero(pretty(e))
        return a / b
    if isinstance(e, Compare):
        return 1.0 if _CMP[e.op](evaluate(e.left, m), evaluate(e.right, m)) else 0.0
    if isinstance(e, Not):
        return 0.0 if evaluate(e.operand, m) != 0.0 else 1.0
    if isinstance(e, And):
        return 1.0 if evaluate(e.left, m) != 0.0 and evaluate(e.right, m) != 0.0 else 0.0
    if isinstance(e, Or):
        return 1.0 if evaluate(e.left, m) != 0.0 or evaluate(e.right, m) != 0.0 else 0.0
    raise TypeError(f"not an expression: {e!r}")


# -- leaf specs ----------------------------------------------------------


@dataclass(frozen=True)
class ConditionSpec:
    """Ordered guard rules; ``None`` as guard marks the default rule."""

    rules: tuple[tuple[Optional[Expr], NodeState], ...]

    def problems(self) -> list[str]:
        out = []
        defaults = [i for i, (g, _) in enumerate(self.rules) if g is None]
        if not defaults:
            out.append("missing default rule")
        elif len(defaults) > 1:
            out.append("more than one default rule")
        elif defaults[0] != len(self.rules) - 1:
            out.append("default rule is not last")
        results = [r for _, r in self.rules]
        if len(set(results)) != len(results):
            out.append("more than one rule for the same result")
        return out

    @property
    def watch(self) -> frozenset[str]:
        keys: set[str] = set()
        for guard, _ in self.rules:
            if guard is not None:
                keys |= deps(guard)
        return frozenset(keys)


@dataclass(frozen=True)
class ActionSpec:
    assignments: tuple[tuple[str, Expr], ...]

    @property
    def targets(self) -> tuple[str, ...]:
        return tuple(k for k, _ in self.assignments)

    @property
    def reads(self) -> frozenset[str]:
        keys: set[str] = set()
        for _, value in self.assignments:
            keys |= deps(value)
        return frozenset(keys)


def eval_condition(c: ConditionSpec, m: Memory) -> NodeState:
    for guard, result in c.rules:
        if guard is None or evaluate(guard, m) != 0.0:
            return result
    raise ValueError("condition has no default rule")


def run_action(a: ActionSpec, m: Memory) -> set[str]:
    changed = set()
    for key, value in a.assignments:
        if key.startswith(STATE_PREFIX):
            raise ReservedKey(key)
        if m.assign(key, evaluate(value, m)):
            changed.add(key)
    return changed


# -- compiled evaluation -------------------------------------------------

_PY_CMP = {"==": "==", "!=": "!=", "<": "<", ">": ">", "<=": "<=", ">=": ">="}


def _num_src(e: Expr) -> str:
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return f"v[{e.key!r}]"
    if isinstance(e, Neg):
        return f"(-{_num_src(e.operand)})"
    if isinstance(e, BinOp):
        return f"({_num_src(e.left)} {e.op} {_num_src(e.right)})"
    return f"(1.0 if {_truth_src(e)} else 0.0)"


def _truth_src(e: Expr) -> str:
    if isinstance(e, Compare):
        return f"({_num_src(e.left)} {_PY_CMP[e.op]} {_num_src(e.right)})"
    if isinstance(e, Not):
        return f"(not {_truth_src(e.operand)})"
    if isinstance(e, And):
        return f"({_truth_src(e.left)} and {_truth_src(e.right)})"
    if isinstance(e, Or):
        return f"({_truth_src(e.left)} or {_truth_src(e.right)})"
    return f"({_num_src(e)} != 0.0)"


def _build(src: str, name: str) -> Callable:
    namespace: dict = {}
    exec(compile(src, f"<abtm {name}>", "exec"), namespace)
    return namespace[name]


def _call_with_autodeclare(fn: Callable, m: Memory, *args):
    # Variables missing from memory are declared on first read, then retried.
    while True:
        try:
            return fn(m._values, *args)
        except KeyError as exc:
            m.get(exc.args[0])
        except ZeroDivisionError as exc:
            raise DivideByZero(str(exc)) from None


def compile_expr(e: Expr) -> Callable[[Memory], float]:
    fn = _build(f"def f(v):\n    return {_num_src(e)}\n", "f")
    return lambda m: _call_with_autodeclare(fn, m)


def compile_condition(c: ConditionSpec, result_map=None) -> Callable[[Memory], NodeState]:
    """Compile a rule list into ``f(memory) -> NodeState``.

    ``result_map`` optionally translates each NodeState into the value the
    compiled function returns (the engine uses float state codes).
    """
    if c.problems():
        raise ValueError("; ".join(c.problems()))
    consts = {}
    src = "def f(v):\n"
    for i, (guard, result) in enumerate(c.rules):
        consts[f"r{i}"] = result if result_map is None else result_map[result]
        if guard is None:
            src += f"    return r{i}\n"
        else:
            src += f"    if {_truth_src(guard)}:\n        return r{i}\n"
    ns: dict = dict(consts)
    exec(compile(src, "<abtm condition>", "exec"), ns)
    fn = ns["f"]
    wrapped = lambda m: _call_with_autodeclare(fn, m)  # noqa: E731
    # Hot paths call ``raw(values)`` directly and fall back on KeyError.
    wrapped.raw = fn
    return wrapped


def compile_action(a: ActionSpec) -> Callable[[Memory], None]:
    """Compile assignments into ``f(memory)``; each right-hand side sees
    the assignments before it."""
    for key in a.targets:
        if key.startswith(STATE_PREFIX):
            raise ReservedKey(key)
    if not a.assignments:
        return lambda m: None
    lines = ["def f(v, assign):"]
    for key, value in a.assignments:
        lines.append(f"    assign({key!r}, {_num_src(value)})")
    fn = _build("\n".join(lines) + "\n", "f")
    reads = tuple(a.reads)

    # Reads are declared up front: retrying after a KeyError halfway through
    # would re-apply the prefix (``x := x + 1`` twice).
    def run(m: Memory) -> None:
        values = m._values
        for key in reads:
            if key not in values:
                m.get(key)
        try:
            fn(values, m.assign)
        except ZeroDivisionError as exc:
            raise DivideByZero(str(exc)) from None

    return run
