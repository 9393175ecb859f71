"""Slow, direct transcription of the propagation algorithms.

Used as an independent oracle for :mod:`abtm.core`: it runs on the parsed
:class:`~abtm.dsl.TreeDefinition`, keeps states in a plain dict keyed by
order tuple, evaluates expressions with the tree-walking interpreter,
rescans every condition on each step and orders the queue with
:func:`kb_less` comparisons instead of post-order ranks.
"""

from __future__ import annotations

from .core import (
    CYCLE_BUDGET,
    LEAF_CALL_TABLE,
    PARALLEL_CALL_TABLE,
    RETURN_TABLE,
    SEQUENTIAL_CALL_TABLE,
    kb_less,
    state_key,
)
from .dsl import NodeDef, TreeDefinition
from .errors import CycleBudgetExceeded
from .expr import eval_condition, run_action
from .memory import Memory
from .states import NodeState, TickType

R, S, F = NodeState.R, NodeState.S, NodeState.F

RETURNS = {"seq": {R, F}, "sel": {R, S}, "skip": {S, F}}
CONTINUE_ON = {"seq": S, "sel": F, "skip": R}


class ReferenceTree:
    def __init__(self, definition: TreeDefinition):
        self.memory = Memory()
        for d in definition.declarations:
            self.memory.declare(d.key, d.scope, d.initial, d.local)
        self.nodes: dict[tuple, NodeDef] = {}
        self.parent: dict[tuple, tuple] = {}
        self.state: dict[tuple, NodeState] = {}

        def visit(node: NodeDef, order: tuple) -> None:
            self.nodes[order] = node
            self.state[order] = R
            self.memory.declare_state(state_key(order), 0.0)
            for i, child in enumerate(node.children):
                self.parent[order + (i,)] = order
                visit(child, order + (i,))

        visit(definition.root, (0,))
        for order, node in self.nodes.items():
            if node.condition is not None:
                for key in node.condition.watch:
                    self.memory.get(key)
        self.memory.clear_dirty()

    def _sync_memory(self) -> None:
        for order, st in self.state.items():
            self.memory._values[state_key(order)] = float(st)

    def tick(self, order: tuple, tick_type: TickType) -> tuple[NodeState, TickType]:
        node = self.nodes[order]
        old = self.state[order]
        if node.kind in ("cond", "act"):
            table = LEAF_CALL_TABLE
        elif node.kind == "par":
            table = PARALLEL_CALL_TABLE
        else:
            table = SEQUENTIAL_CALL_TABLE
        child_tick = table[old][tick_type]
        new = self.evaluate(order, child_tick)
        self.state[order] = new
        return new, RETURN_TABLE[old][new]

    def evaluate(self, order: tuple, tick_type: TickType) -> NodeState:
        node = self.nodes[order]
        if tick_type == TickType.NONE:
            return self.state[order]
        if node.kind == "cond":
            return eval_condition(node.condition, self.memory)
        if node.kind == "act":
            if tick_type == TickType.AF:
                run_action(node.action, self.memory)
                return S
            return self.state[order]
        children = [order + (i,) for i in range(len(node.children))]
        if node.kind == "par":
            states = [self.tick(c, tick_type)[0] for c in children]
            if F in states:
                return F
            return R if R in states else S
        for child in children:
            st, _ = self.tick(child, tick_type)
            if st in RETURNS[node.kind]:
                return st
        return CONTINUE_ON[node.kind]

    def changed_conditions(self) -> list[tuple]:
        dirty = self.memory.clear_dirty()
        found = []
        for order, node in self.nodes.items():
            if node.condition is None or not (node.condition.watch & dirty):
                continue
            if eval_condition(node.condition, self.memory) != self.state[order]:
                found.append(order)
        # Insertion sort with kb_less keeps this independent of rank tricks.
        ordered: list[tuple] = []
        for order in found:
            i = 0
            while i < len(ordered) and kb_less(ordered[i], order):
                i += 1
            ordered.insert(i, order)
        return ordered

    def _loop(self, queue: list[tuple[tuple, TickType]]) -> dict[str, float]:
        pops = 0
        while queue:
            best = 0
            for i in range(1, len(queue)):
                if kb_less(queue[i][0], queue[best][0]):
                    best = i
            order, tick_type = queue.pop(best)
            pops += 1
            if pops > CYCLE_BUDGET:
                raise CycleBudgetExceeded("reference budget exhausted")
            _, rise = self.tick(order, tick_type)
            if rise in (TickType.AR, TickType.CR) and order in self.parent:
                self._insert(queue, self.parent[order], rise)
            for c in self.changed_conditions():
                self._insert(queue, c, TickType.AF)
        self._sync_memory()
        return self.memory.drain_output_changes()

    @staticmethod
    def _insert(queue, order, tick_type) -> None:
        for i, (o, t) in enumerate(queue):
            if o == order:
                queue[i] = (o, max(t, tick_type))
                return
        queue.append((order, tick_type))

    def start(self) -> dict[str, float]:
        queue = [(c, TickType.AF) for c in self.changed_conditions()]
        self._insert(queue, (0,), TickType.AF)
        return self._loop(queue)

    def callback(self, sample: dict[str, float]) -> dict[str, float]:
        self.memory.set(sample)
        return self._loop([(c, TickType.AF) for c in self.changed_conditions()])

    def classical_callback(self, sample: dict[str, float]) -> dict[str, float]:
        self.memory.set(sample)
        self.tick((0,), TickType.AF)
        self.memory.clear_dirty()
        self._sync_memory()
        return self.memory.drain_output_changes()
