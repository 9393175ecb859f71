"""Asynchronous tick engine.

A :class:`Tree` couples a node graph with a :class:`~abtm.memory.Memory`.
Node states live in memory under ``__state__/<order>`` as 0.0 (R), 1.0 (S)
or 2.0 (F), so the memory hash covers the whole executor state.

Inside the engine states are carried as those float codes and tick types as
plain ints; the public helpers convert to :class:`NodeState` and
:class:`TickType`.
"""

from __future__ import annotations

import heapq
from typing import Callable, Iterable, Optional, Sequence

from .errors import AbtmError, CycleBudgetExceeded
from .expr import ActionSpec, ConditionSpec, compile_action, compile_condition
from .memory import STATE_PREFIX, Memory
from .states import NodeState, TickType

CYCLE_BUDGET = 10_000

_R, _S, _F = 0.0, 1.0, 2.0
_NONE, _CR, _CF, _AR, _AF = 0, 1, 2, 3, 4
_STATE_CODE = {NodeState.R: _R, NodeState.S: _S, NodeState.F: _F}

# RETURN_TABLE[before][after] -> tick type handed to the parent.
RETURN_TABLE: dict[NodeState, dict[NodeState, TickType]] = {
    NodeState.R: {NodeState.R: TickType.NONE, NodeState.S: TickType.AR, NodeState.F: TickType.AR},
    NodeState.S: {NodeState.R: TickType.NONE, NodeState.S: TickType.NONE, NodeState.F: TickType.CR},
    NodeState.F: {NodeState.R: TickType.NONE, NodeState.S: TickType.CR, NodeState.F: TickType.NONE},
}

# SEQUENTIAL_CALL_TABLE[state][tick type] -> tick type passed to children.
SEQUENTIAL_CALL_TABLE: dict[NodeState, dict[TickType, TickType]] = {
    NodeState.R: {TickType.AF: TickType.AF, TickType.AR: TickType.AF, TickType.CF: TickType.NONE, TickType.CR: TickType.CF},
    NodeState.S: {TickType.AF: TickType.AF, TickType.AR: TickType.NONE, TickType.CF: TickType.NONE, TickType.CR: TickType.CF},
    NodeState.F: {TickType.AF: TickType.AF, TickType.AR: TickType.NONE, TickType.CF: TickType.NONE, TickType.CR: TickType.CF},
}

PARALLEL_CALL_TABLE = {s: dict(row) for s, row in SEQUENTIAL_CALL_TABLE.items()}
PARALLEL_CALL_TABLE[NodeState.R][TickType.AR] = TickType.CF

# Leaves: fall ticks pass through, rise ticks stop, regardless of state.
LEAF_CALL_TABLE: dict[NodeState, dict[TickType, TickType]] = {
    s: {TickType.AF: TickType.AF, TickType.AR: TickType.NONE, TickType.CF: TickType.CF, TickType.CR: TickType.NONE}
    for s in NodeState
}


def _compile_call_table(table) -> dict[float, tuple[int, ...]]:
    # Indexed by float state code, then by int tick type (NONE maps to NONE).
    return {
        _STATE_CODE[s]: tuple(int(row.get(TickType(t), TickType.NONE)) for t in range(5))
        for s, row in table.items()
    }


_RET = {
    _STATE_CODE[b]: {_STATE_CODE[a]: int(t) for a, t in row.items()}
    for b, row in RETURN_TABLE.items()
}
_SEQ_CALL = _compile_call_table(SEQUENTIAL_CALL_TABLE)
_PAR_CALL = _compile_call_table(PARALLEL_CALL_TABLE)
_LEAF_CALL = _compile_call_table(LEAF_CALL_TABLE)


def _blame(exc: Exception, node: "Node") -> Exception:
    # Innermost node wins; callers report ``exc.node``.
    if getattr(exc, "node", None) is None:
        exc.node = node.name or ".".join(map(str, node.order))
    return exc


def kb_less(a: Sequence[int], b: Sequence[int]) -> bool:
    """Kleene-Brouwer order: descendants before ancestors, left before right."""
    for x, y in zip(a, b):
        if x != y:
            return x < y
    return len(a) > len(b)


def state_key(order: Sequence[int]) -> str:
    return STATE_PREFIX + ".".join(map(str, order))


# -- nodes ---------------------------------------------------------------


class Node:
    kind = "node"
    call_table = _SEQ_CALL

    def __init__(self, name: str = "", children: Iterable["Node"] = ()):
        self.name = name
        self.children: list[Node] = list(children)
        self.parent: Optional[Node] = None
        self.order: tuple[int, ...] = ()
        self.skey = ""
        self.rank = -1  # post-order index == Kleene-Brouwer rank
        self.vals: dict[str, float] = {}
        self.memory: Optional[Memory] = None

    @property
    def state(self) -> NodeState:
        return NodeState(int(self.vals[self.skey]))

    def tick(self, tick_type: int) -> tuple[float, int]:
        vals = self.vals
        old = vals[self.skey]
        new = self.evaluate(self.call_table[old][tick_type])
        if new != old:
            vals[self.skey] = new
        return new, _RET[old][new]

    def evaluate(self, tick_type: int) -> float:
        raise NotImplementedError

    def walk(self):
        """Nodes in post-order (the Kleene-Brouwer order)."""
        for child in self.children:
            yield from child.walk()
        yield self

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"<{type(self).__name__}{label} {'.'.join(map(str, self.order))}>"


class Sequential(Node):
    """Sequence, Selector and Skipper differ only in these two attributes."""

    returns: frozenset = frozenset()
    continue_on = _R

    def evaluate(self, tick_type: int) -> float:
        if not tick_type:
            return self.vals[self.skey]
        returns = self.returns
        for child in self.children:
            state = child.tick(tick_type)[0]
            if state in returns:
                return state
        return self.continue_on


class Sequence(Sequential):
    kind = "seq"
    returns = frozenset({_R, _F})
    continue_on = _S


class Selector(Sequential):
    kind = "sel"
    returns = frozenset({_R, _S})
    continue_on = _F


class Skipper(Sequential):
    kind = "skip"
    returns = frozenset({_S, _F})
    continue_on = _R


class Parallel(Node):
    """All-of-N parallel: F if any child F, else R if any R, else S."""

    kind = "par"
    call_table = _PAR_CALL

    def evaluate(self, tick_type: int) -> float:
        if not tick_type:
            return self.vals[self.skey]
        result = _S
        for child in self.children:
            state = child.tick(tick_type)[0]
            if state == _F:
                result = _F
            elif state == _R and result == _S:
                result = _R
        return result


class Condition(Node):
    kind = "cond"
    call_table = _LEAF_CALL

    def __init__(self, name: str, spec: ConditionSpec):
        super().__init__(name)
        self.spec = spec
        self.watch = spec.watch
        self.check: Callable[[Memory], float] = compile_condition(spec, _STATE_CODE)
        self.raw = self.check.raw
        # Result of the last scan inside a propagation; see Tree._propagate.
        self.memo: Optional[float] = None
        # Node states are written without marking memory dirty, so guards
        # reading them can never reuse a scan result.
        self.memoable = not any(k.startswith(STATE_PREFIX) for k in spec.watch)

    def fresh(self) -> float:
        try:
            return self.raw(self.vals)
        except (KeyError, ZeroDivisionError):
            # Slow path declares missing keys or raises DivideByZero.
            try:
                return self.check(self.memory)
            except AbtmError as exc:
                _blame(exc, self)
                raise

    def evaluate(self, tick_type: int) -> float:
        if not tick_type:
            return self.vals[self.skey]
        memo = self.memo
        if memo is not None and not self.memory.dirty:
            return memo
        return self.fresh()


class Action(Node):
    kind = "act"
    call_table = _LEAF_CALL

    def __init__(self, name: str, spec: ActionSpec):
        super().__init__(name)
        self.spec = spec
        self.run: Callable[[Memory], None] = compile_action(spec)

    def evaluate(self, tick_type: int) -> float:
        if tick_type == _AF:
            try:
                self.run(self.memory)
            except AbtmError as exc:
                _blame(exc, self)
                raise
            return _S
        return self.vals[self.skey]


CONTROL_KINDS = {cls.kind: cls for cls in (Sequence, Selector, Skipper, Parallel)}


# -- tree ----------------------------------------------------------------


class Tree:
    """Node graph plus memory; one serialized execution unit.

    Building a tree assigns order keys (root ``(0,)``, children append their
    position), declares a state slot for every node initialised to R, and
    indexes conditions by the variables they watch.
    """

    def __init__(self, root: Node, memory: Optional[Memory] = None, budget: int = CYCLE_BUDGET):
        self.root = root
        self.memory = memory if memory is not None else Memory()
        self.budget = budget
        self.last_pops = 0
        self._memoed: list[Condition] = []
        self._assign(root, (0,), None)
        self.nodes: list[Node] = list(root.walk())
        vals = self.memory._values
        for rank, node in enumerate(self.nodes):
            node.rank = rank
            node.vals = vals
            node.memory = self.memory
            self.memory.declare_state(node.skey, _R)
        self.conditions = [n for n in self.nodes if isinstance(n, Condition)]
        self.watchers: dict[str, list[Condition]] = {}
        for cond in self.conditions:
            for key in cond.watch:
                self.watchers.setdefault(key, []).append(cond)
                if key not in self.memory:
                    self.memory.get(key)
        for node in self.nodes:
            if isinstance(node, Action):
                for key in node.spec.targets + tuple(node.spec.reads):
                    if key not in self.memory:
                        self.memory.get(key)
        # Declarations above are setup, not observations.
        self.memory.clear_dirty()

    @staticmethod
    def _assign(node: Node, order: tuple[int, ...], parent: Optional[Node]) -> None:
        stack = [(node, order, parent)]
        while stack:
            node, order, parent = stack.pop()
            node.order = order
            node.parent = parent
            node.skey = state_key(order)
            for i, child in enumerate(node.children):
                stack.append((child, order + (i,), node))

    def node(self, order: Sequence[int]) -> Node:
        order = tuple(order)
        for n in self.nodes:
            if n.order == order:
                return n
        raise KeyError(order)

    def find(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def states(self) -> dict[str, NodeState]:
        return {n.skey: n.state for n in self.nodes}

    def hash(self) -> int:
        return self.memory.hash()

    # -- propagation ------------------------------------------------------

    def changed_conditions(self, memo: bool = False) -> list[Condition]:
        """Conditions watching a dirty variable whose fresh result differs
        from their stored state, in Kleene-Brouwer order.  Clears dirty.

        With ``memo`` every evaluated condition keeps its result so the tick
        that follows can skip a second evaluation.
        """
        memory = self.memory
        dirty = memory.dirty
        if not dirty:
            return []
        memory.dirty = set()
        watchers = self.watchers
        if len(dirty) == 1:
            candidates = watchers.get(next(iter(dirty)))
            if not candidates:
                return []
        else:
            found: dict[int, Condition] = {}
            for key in dirty:
                watching = watchers.get(key)
                if watching:
                    for cond in watching:
                        found[cond.rank] = cond
            if not found:
                return []
            # Watcher lists are in rank order already; merged ones are not.
            candidates = [found[r] for r in sorted(found)] if len(found) > 1 else list(found.values())
        vals = memory._values
        changed = []
        for c in candidates:
            value = c.fresh()
            if memo and c.memoable:
                c.memo = value
                self._memoed.append(c)
            if value != vals[c.skey]:
                changed.append(c)
        return changed

    def pending_conditions(self) -> list[Condition]:
        """:meth:`changed_conditions` without consuming the dirty set."""
        memory = self.memory
        dirty = memory.dirty
        try:
            return self.changed_conditions()
        finally:
            # changed_conditions swaps in a fresh set; put the original back.
            memory.dirty = dirty

    def _propagate(self, queue: dict[int, int]) -> dict[str, float]:
        # A memo stays valid while memory is clean: any write to a watched
        # key marks it dirty, and the rescan after each tick refreshes it.
        try:
            return self._drain_queue(queue)
        finally:
            for c in self._memoed:
                c.memo = None
            self._memoed.clear()

    def _drain_queue(self, queue: dict[int, int]) -> dict[str, float]:
        nodes = self.nodes
        heap = list(queue)
        heapq.heapify(heap)
        pops = 0
        budget = self.budget
        while heap:
            rank = heapq.heappop(heap)
            tick_type = queue.pop(rank)
            pops += 1
            if pops > budget:
                self.last_pops = pops
                raise CycleBudgetExceeded(f"more than {budget} ticks in one callback")
            node = nodes[rank]
            rise = node.tick(tick_type)[1]
            if rise == _AR or rise == _CR:
                parent = node.parent
                if parent is not None:
                    prank = parent.rank
                    prev = queue.get(prank)
                    if prev is None:
                        queue[prank] = rise
                        heapq.heappush(heap, prank)
                    elif rise > prev:
                        queue[prank] = rise
            if self.memory.dirty:
                for cond in self.changed_conditions(True):
                    crank = cond.rank
                    prev = queue.get(crank)
                    if prev is None:
                        queue[crank] = _AF
                        heapq.heappush(heap, crank)
                    elif prev != _AF:
                        queue[crank] = _AF
        self.last_pops = pops
        return self.memory.drain_output_changes()

    def callback(self, sample: dict[str, float]) -> dict[str, float]:
        """Apply ``sample`` and propagate ticks from the conditions it flips."""
        memory = self.memory
        memory.set(sample)
        dirty = memory.dirty
        # dict_keys.isdisjoint walks the smaller side; set.isdisjoint(dict)
        # would walk every watched key.
        if dirty and self.watchers.keys().isdisjoint(dirty):
            # Nothing watches these keys: the common telemetry case.
            memory.dirty = set()
            dirty = None
        queue = {c.rank: _AF for c in self.changed_conditions(True)} if dirty else None
        if not queue:
            for c in self._memoed:
                c.memo = None
            self._memoed.clear()
            self.last_pops = 0
            return memory.drain_output_changes()
        return self._propagate(queue)

    def start(self) -> dict[str, float]:
        """Activate the tree with a single AF tick at the root."""
        queue = {c.rank: _AF for c in self.changed_conditions()}
        queue[self.root.rank] = _AF
        return self._propagate(queue)

    def classical_callback(self, sample: dict[str, float]) -> dict[str, float]:
        """Baseline: apply ``sample`` and traverse the whole tree top-down."""
        memory = self.memory
        memory.set(sample)
        self.root.tick(_AF)
        memory.dirty = set()
        self.last_pops = 1
        return memory.drain_output_changes()


# -- public wrappers -----------------------------------------------------


def tick(node: Node, tick_type: TickType) -> tuple[NodeState, TickType]:
    state, rise = node.tick(int(tick_type))
    return NodeState(int(state)), TickType(rise)


def callback(tree: Tree, sample: dict[str, float]) -> dict[str, float]:
    return tree.callback(sample)


def start(tree: Tree) -> dict[str, float]:
    return tree.start()


def classical_callback(tree: Tree, sample: dict[str, float]) -> dict[str, float]:
    return tree.classical_callback(sample)
