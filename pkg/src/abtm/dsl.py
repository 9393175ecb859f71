"""Text format for trees.

A file is a list of variable declarations followed by one root node::

    output land;
    input land_started = 0;

    seq mission {
        act land { land := 1; }
        sel accepted_or_fail {
            cond accepted { S: land_started > 0; F: land_started < 0; R: default; }
            act abort { abort := 1; }
        }
    }

Control nodes are ``seq``, ``sel``, ``skip`` and ``par``; leaves are ``cond``
(guard rules, first match wins, a trailing ``default`` is required) and
``act`` (assignments run in order).  ``//`` starts a comment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from .core import CONTROL_KINDS, Action, Condition, Node, Tree
from .errors import DuplicateName, ParseError, ValidationError
from .expr import ActionSpec, BinOp, ConditionSpec, Expr, ExprParser, deps, format_number, pretty, tokenize
from .memory import DEFAULT_LOCAL_KEYS, STATE_PREFIX, Memory, Scope
from .states import NodeState

DECL_KEYWORDS = {"input": (Scope.INPUT, False), "var": (Scope.INPUT, False),
                 "output": (Scope.OUTPUT, False), "local": (Scope.INPUT, True)}
LEAF_KEYWORDS = ("cond", "act")

_COMMENT_RE = re.compile(r"//[^\n]*")


@dataclass(frozen=True)
class Declaration:
    key: str
    scope: Scope = Scope.INPUT
    initial: float = 0.0
    local: bool = False


@dataclass(frozen=True)
class NodeDef:
    kind: str
    name: str = ""
    children: tuple["NodeDef", ...] = ()
    condition: Optional[ConditionSpec] = None
    action: Optional[ActionSpec] = None
    offset: int = field(default=-1, compare=False)

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()

    @property
    def is_leaf(self) -> bool:
        return self.kind in LEAF_KEYWORDS


@dataclass(frozen=True)
class TreeDefinition:
    declarations: tuple[Declaration, ...]
    root: NodeDef

    def declared(self) -> dict[str, Declaration]:
        return {d.key: d for d in self.declarations}

    def referenced(self) -> set[str]:
        keys: set[str] = set()
        for node in self.root.walk():
            if node.condition is not None:
                keys |= node.condition.watch
            if node.action is not None:
                keys |= set(node.action.targets) | node.action.reads
        return keys


# -- parsing -------------------------------------------------------------


def _line_col(text: str, offset: int) -> tuple[int, int]:
    line = text.count("\n", 0, offset) + 1
    column = offset - (text.rfind("\n", 0, offset) + 1) + 1
    return line, column


class _TreeParser(ExprParser):
    def ident(self, what: str) -> str:
        tok = self.current
        if tok.kind != "ident":
            raise self.fail(what)
        self.advance()
        return tok.text

    def number(self) -> float:
        sign = 1.0
        if self.at("-"):
            self.advance()
            sign = -1.0
        tok = self.current
        if tok.kind != "number":
            raise self.fail("number")
        self.advance()
        return sign * float(tok.text)

    def parse_file(self) -> TreeDefinition:
        decls = []
        seen = set()
        while self.current.kind == "ident" and self.current.text in DECL_KEYWORDS:
            offset = self.current.offset
            scope, local = DECL_KEYWORDS[self.advance().text]
            key = self.ident("variable name")
            initial = 0.0
            if self.at("="):
                self.advance()
                initial = self.number()
            self.expect(";")
            if key in seen:
                raise ParseError(f"variable {key!r} declared twice", offset)
            seen.add(key)
            decls.append(Declaration(key, scope, initial, local or key in DEFAULT_LOCAL_KEYS))
        root = self.parse_node()
        if self.current.kind != "eof":
            raise self.fail("end of file")
        return TreeDefinition(tuple(decls), root)

    def parse_node(self) -> NodeDef:
        tok = self.current
        if tok.kind != "ident" or tok.text not in (*CONTROL_KINDS, *LEAF_KEYWORDS):
            raise self.fail("node keyword (seq, sel, skip, par, cond, act)")
        kind = self.advance().text
        if kind in CONTROL_KINDS:
            name = self.advance().text if self.current.kind == "ident" else ""
            self.expect("{")
            children = []
            names = set()
            while not self.at("}"):
                child = self.parse_node()
                if child.name and child.name in names:
                    raise DuplicateName(f"{child.name!r} appears twice under {name or kind!r}")
                names.add(child.name)
                children.append(child)
            self.expect("}")
            return NodeDef(kind, name, tuple(children), offset=tok.offset)
        name = self.ident(f"{kind} name")
        self.expect("{")
        if kind == "cond":
            rules = []
            while not self.at("}"):
                rules.append(self.parse_rule())
            self.expect("}")
            return NodeDef(kind, name, condition=ConditionSpec(tuple(rules)), offset=tok.offset)
        assignments = []
        while not self.at("}"):
            key = self.ident("assignment target")
            self.expect(":=")
            assignments.append((key, self.parse_or()))
            self.expect(";")
        self.expect("}")
        return NodeDef(kind, name, action=ActionSpec(tuple(assignments)), offset=tok.offset)

    def parse_rule(self) -> tuple[Optional[Expr], NodeState]:
        tok = self.current
        if tok.kind != "ident" or tok.text not in ("S", "F", "R"):
            raise self.fail("rule result S, F or R")
        self.advance()
        result = NodeState[tok.text]
        self.expect(":")
        guard: Optional[Expr]
        if self.current.kind == "ident" and self.current.text == "default" and self.tokens[self.pos + 1].text == ";":
            self.advance()
            guard = None
        else:
            guard = self.parse_or()
        self.expect(";")
        return guard, result


def parse_tree(text: str) -> TreeDefinition:
    """Parse tree-file text; errors carry line and column."""
    # Blank out comments so token offsets still match the original text.
    clean = _COMMENT_RE.sub(lambda m: " " * len(m.group()), text)
    try:
        return _TreeParser(tokenize(clean)).parse_file()
    except ParseError as exc:
        line, col = _line_col(text, exc.offset)
        raise ParseError(exc.message, exc.offset, exc.expected, line, col) from None


# -- validation ----------------------------------------------------------


@dataclass(frozen=True)
class Diagnostic:
    code: str
    severity: str  # "error" or "warning"
    message: str
    node: str = ""

    @property
    def is_error(self) -> bool:
        return self.severity == "error"

    def __str__(self) -> str:
        where = f" [{self.node}]" if self.node else ""
        return f"{self.severity}: {self.code}{where}: {self.message}"


def _has_division(e: Expr) -> bool:
    stack = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, BinOp) and node.op == "/":
            return True
        for attr in ("left", "right", "operand"):
            child = getattr(node, attr, None)
            if child is not None:
                stack.append(child)
    return False


def validate(definition: TreeDefinition) -> list[Diagnostic]:
    """Errors block :func:`build`; warnings are informational."""
    out: list[Diagnostic] = []
    declared = definition.declared()
    for node in definition.root.walk():
        label = node.name or node.kind
        if node.kind in CONTROL_KINDS and not node.children:
            out.append(Diagnostic("EmptyControlNode", "error", f"{node.kind} node has no children", label))
        if node.condition is not None:
            for problem in node.condition.problems():
                code = "MissingDefault" if problem == "missing default rule" else "BadRules"
                out.append(Diagnostic(code, "error", problem, label))
            for guard, _ in node.condition.rules:
                if guard is not None and _has_division(guard):
                    out.append(Diagnostic("DivisionPresent", "warning", f"guard {pretty(guard)!r} divides", label))
        if node.action is not None:
            for key, value in node.action.assignments:
                if key.startswith(STATE_PREFIX):
                    out.append(Diagnostic("ReservedKeyWrite", "error", f"writes engine-owned {key!r}", label))
                elif key in declared and declared[key].scope is Scope.INPUT and not declared[key].local:
                    out.append(Diagnostic("AssignToInput", "warning", f"assigns input variable {key!r}", label))
                if _has_division(value):
                    out.append(Diagnostic("DivisionPresent", "warning", f"{key} := {pretty(value)} divides", label))
    for key in sorted(definition.referenced() - set(declared)):
        if not key.startswith(STATE_PREFIX):
            out.append(Diagnostic("Undeclared", "warning", f"{key!r} is undeclared; treated as input 0.0"))
    return out


# -- building ------------------------------------------------------------


def _make_node(d: NodeDef) -> Node:
    if d.kind == "cond":
        return Condition(d.name, d.condition)
    if d.kind == "act":
        return Action(d.name, d.action)
    return CONTROL_KINDS[d.kind](d.name, [_make_node(c) for c in d.children])


def build(definition: TreeDefinition, memory: Optional[Memory] = None) -> Tree:
    errors = [d for d in validate(definition) if d.is_error]
    if errors:
        raise ValidationError(errors)
    memory = memory if memory is not None else Memory()
    for decl in definition.declarations:
        memory.declare(decl.key, decl.scope, decl.initial, decl.local)
    return Tree(_make_node(definition.root), memory)


def load_tree(text: str) -> Tree:
    return build(parse_tree(text))


# -- printing ------------------------------------------------------------


def _decl_keyword(d: Declaration) -> str:
    if d.scope is Scope.OUTPUT:
        return "output"
    if d.local and d.key not in DEFAULT_LOCAL_KEYS:
        return "local"
    return "input"


def print_tree(definition: TreeDefinition, indent: str = "    ") -> str:
    """Canonical text form; parsing it gives back an equal definition."""
    lines = []
    for d in definition.declarations:
        init = f" = {format_number(d.initial)}" if d.initial != 0.0 or str(d.initial).startswith("-") else ""
        lines.append(f"{_decl_keyword(d)} {d.key}{init};")
    if lines:
        lines.append("")

    def emit(node: NodeDef, depth: int) -> None:
        pad = indent * depth
        head = f"{node.kind} {node.name}".rstrip()
        if node.condition is not None:
            lines.append(f"{pad}{head} {{")
            for guard, result in node.condition.rules:
                lines.append(f"{pad}{indent}{result.name}: {'default' if guard is None else pretty(guard)};")
            lines.append(f"{pad}}}")
        elif node.action is not None:
            lines.append(f"{pad}{head} {{")
            for key, value in node.action.assignments:
                lines.append(f"{pad}{indent}{key} := {pretty(value)};")
            lines.append(f"{pad}}}")
        else:
            lines.append(f"{pad}{head} {{")
            for child in node.children:
                emit(child, depth + 1)
            lines.append(f"{pad}}}")

    emit(definition.root, 0)
    return "\n".join(lines) + "\n"
