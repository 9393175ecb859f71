"""Asynchronous behavior trees with memory.

Trees react to samples written into a key-value memory: only conditions
whose inputs changed are re-evaluated, and ticks travel up and down from
there.  Also included: a text format for trees, a replica synchronization
protocol, a deterministic multi-replica simulator and a benchmark harness.
"""

from .core import Action, Condition, Node, Parallel, Selector, Sequence, Skipper, Tree, callback, start, tick
from .dsl import NodeDef, TreeDefinition, build, load_tree, parse_tree, print_tree, validate
from .errors import (
    AbtmError,
    ConfigError,
    CycleBudgetExceeded,
    DivideByZero,
    DuplicateKey,
    DuplicateName,
    ExecutorError,
    MalformedDump,
    OracleMismatch,
    ParseError,
    ReservedKey,
    ValidationError,
)
from .expr import ActionSpec, ConditionSpec, evaluate, parse_expr, pretty
from .memory import Memory, Scope
from .states import NodeState, TickType

__version__ = "0.1.0"

__all__ = [
    "AbtmError", "Action", "ActionSpec", "Condition", "ConditionSpec", "ConfigError",
    "CycleBudgetExceeded", "DivideByZero", "DuplicateKey", "DuplicateName", "ExecutorError",
    "MalformedDump", "Memory", "Node", "NodeDef", "NodeState", "OracleMismatch", "Parallel",
    "ParseError", "ReservedKey", "Scope", "Selector", "Sequence", "Skipper", "TickType", "Tree",
    "TreeDefinition", "ValidationError", "build", "callback", "evaluate", "load_tree",
    "parse_expr", "parse_tree", "pretty", "print_tree", "start", "tick", "validate",
]
