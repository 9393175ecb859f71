"""Shared helpers for the test modules."""

import json
from pathlib import Path

from hypothesis import strategies as st

from abtm.dsl import NodeDef, TreeDefinition, build, parse_tree
from abtm.expr import ActionSpec, ConditionSpec, parse_expr
from abtm.memory import Scope
from abtm.dsl import Declaration
from abtm.states import NodeState

FIXTURES = Path(__file__).parent / "fixtures"


def tree(text):
    return build(parse_tree(text))


def fixture_text(name):
    return (FIXTURES / name).read_text()


def samples(name):
    return [json.loads(line) for line in fixture_text(name).splitlines() if line.strip()]


def trace_line(step, root, outputs):
    return json.dumps({"step": step, "root": root, "out": outputs}, sort_keys=True)


def trace(engine, stream, root_state):
    """Golden transcript: start, then one line per sample."""
    out = engine.start()
    lines = [trace_line(0, root_state(), out)]
    for i, sample in enumerate(stream, 1):
        out = engine.callback(sample)
        lines.append(trace_line(i, root_state(), out))
    return "\n".join(lines) + "\n"


def fixed(state):
    """A condition that always evaluates to ``state``."""
    return NodeDef("cond", condition=ConditionSpec(((None, state),)), name=f"c_{state.name}")


# -- random trees with feedback ---------------------------------------------

INPUTS = ("i0", "i1", "i2")
OUTPUTS = ("o0", "o1", "o2")
STATES = (NodeState.R, NodeState.S, NodeState.F)


@st.composite
def conditions(draw):
    key = draw(st.sampled_from(INPUTS + OUTPUTS))
    lo, hi = sorted(draw(st.lists(st.integers(0, 3), min_size=2, max_size=2)))
    first, second, default = draw(st.permutations(STATES))
    rules = ((parse_expr(f"{key} < {lo}"), first), (parse_expr(f"{key} > {hi}"), second), (None, default))
    return NodeDef("cond", "", condition=ConditionSpec(rules))


@st.composite
def actions(draw):
    key = draw(st.sampled_from(OUTPUTS))
    src = draw(st.sampled_from(INPUTS + OUTPUTS))
    text = draw(st.sampled_from([f"{src}", "1", "0", f"{src} + 1", f"3 - {src}"]))
    return NodeDef("act", "", action=ActionSpec(((key, parse_expr(text)),)))


def _name(node, path):
    return NodeDef(node.kind, "n" + "_".join(map(str, path)),
                   tuple(_name(c, path + (i,)) for i, c in enumerate(node.children)),
                   node.condition, node.action)


def node_defs(max_leaves=12):
    leaves = st.one_of(conditions(), actions())

    def extend(inner):
        return st.tuples(st.sampled_from(["seq", "sel", "skip", "par"]), st.lists(inner, min_size=1, max_size=4)).map(
            lambda t: NodeDef(t[0], "", tuple(t[1])))

    return st.recursive(leaves, extend, max_leaves=max_leaves).map(lambda n: _name(n, (0,)))


def definitions(max_leaves=12):
    decls = tuple(Declaration(k, Scope.OUTPUT) for k in OUTPUTS) + tuple(Declaration(k) for k in INPUTS)
    return node_defs(max_leaves).map(lambda root: TreeDefinition(decls, root))


sample_streams = st.lists(
    st.dictionaries(st.sampled_from(INPUTS), st.integers(0, 4).map(float), min_size=1, max_size=2),
    max_size=12,
)


# -- scenarios ----------------------------------------------------------------

# Every change of x is one condition flip and one output.
COUNTER = """
input x;
output y;
output n;
var seen;
seq counter {
  cond changed { S: x != seen; R: default; }
  act note { seen := x; y := x; n := n + 1; }
  cond rearm { R: default; }
}
"""


def scenario(duration, every=3.0, first=1.5, tick=0.05, **extra):
    count = int((duration - first) // every)
    data = {
        "replicas": 3,
        "tree_source": COUNTER,
        "max_delay": 0.5,
        "time_tick": tick,
        "duration": duration,
        "seed": 7,
        "schedule": [{"time": first, "sample": {"x": 1},
                      "repeat": {"every": every, "count": count, "increment": {"x": 1}}}],
    }
    data.update(extra)
    return data
