"""Classical top-down traversal vs asynchronous propagation.

Random trees are full trees: every control node (Sequence, Selector or
Skipper, uniformly) has a uniform number of children and all leaves sit at
the last level.  A leaf is a Condition or an Action by coin flip.  Condition
``c<i>`` reads its own input ``in<i>`` and is three-valued (S above 0.5, F
below -0.5, R otherwise); Action ``a<i>`` sets its own output ``out<i>`` to 1.
The guard complexity tier is the number of comparison terms per guard; the
extra terms are always true on the sample values used, so tiers change cost
and not behavior.

With ``initial_state="continue"`` (the default) every condition starts in the
state its parent continues on, so a fresh tree is traversed as deeply as its
actions allow; ``"random"`` draws the starting inputs from {-1, 0, 1}.  Dense streams move one condition input to a different value in
{-1, 0, 1} per sample, which always flips that condition.  Sparse streams
write a variable no condition watches.
"""

from __future__ import annotations

import csv
import json
import random
import gc
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .core import Tree
from .dsl import Declaration, NodeDef, TreeDefinition, build, print_tree
from .errors import ConfigError, OracleMismatch
from .expr import ActionSpec, And, Compare, ConditionSpec, Num, Var
from .memory import Scope, float_to_hex, fnv1a_64
from .states import NodeState

CONTROL_CHOICES = ("seq", "sel", "skip")
TIERS = (1, 3, 9)
DENSE_VALUES = (-1.0, 0.0, 1.0)
NOISE_KEY = "noise"
# Input value putting a condition in the state its parent continues on.
CONTINUE_VALUE = {"seq": 1.0, "sel": -1.0, "skip": 0.0}


@dataclass(frozen=True)
class BenchConfig:
    tree_count: int = 200
    height: tuple[int, int] = (3, 5)
    children: tuple[int, int] = (3, 7)
    mode: str = "both"  # dense | sparse | both
    samples: int = 1000
    seed: int = 0
    tiers: tuple[int, ...] = TIERS
    repetitions: int = 3
    target_nodes: Optional[int] = None
    target_band: float = 0.35  # accepted relative deviation from target_nodes
    initial_state: str = "continue"  # continue | random

    def __post_init__(self):
        for name in ("height", "children"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ConfigError(f"bad {name} range {lo}..{hi}")
        if self.height[0] < 2:
            raise ConfigError("height must be at least 2 (root plus leaves)")
        if self.tree_count < 1:
            raise ConfigError("tree_count must be >= 1")
        if self.mode not in ("dense", "sparse", "both"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.initial_state not in ("continue", "random"):
            raise ConfigError(f"unknown initial_state {self.initial_state!r}")
        if self.samples < 0 or self.repetitions < 1:
            raise ConfigError("samples must be >= 0 and repetitions >= 1")

    @property
    def modes(self) -> tuple[str, ...]:
        return ("dense", "sparse") if self.mode == "both" else (self.mode,)


# -- generation ----------------------------------------------------------


def _guard(key: str, positive: bool, tier: int) -> Compare | And:
    var = Var(key)
    if positive:
        expr = Compare(">", var, Num(0.5))
        extra = [Compare("<", var, Num(10.0 + j)) for j in range(tier - 1)]
    else:
        expr = Compare("<", var, Num(-0.5))
        extra = [Compare(">", var, Num(-10.0 - j)) for j in range(tier - 1)]
    for term in extra:
        expr = And(expr, term)
    return expr


def _condition(i: int, tier: int) -> NodeDef:
    key = f"in{i}"
    rules = (
        (_guard(key, True, tier), NodeState.S),
        (_guard(key, False, tier), NodeState.F),
        (None, NodeState.R),
    )
    return NodeDef("cond", f"c{i}", condition=ConditionSpec(rules))


def _action(i: int) -> NodeDef:
    return NodeDef("act", f"a{i}", action=ActionSpec(((f"out{i}", Num(1.0)),)))


def generate_random_tree(seed: int, cfg: BenchConfig = BenchConfig(), tier: int = 1) -> TreeDefinition:
    """Seeded random feedback-free tree.

    With ``cfg.target_nodes`` set, shapes are redrawn from the same seeded
    stream until the node count is within ``target_band`` of the target.
    """
    rng = random.Random(seed)
    for _ in range(10_000):
        height = rng.randint(*cfg.height)
        shape = _draw_shape(rng, height, cfg.children)
        if cfg.target_nodes is None:
            break
        count = _count(shape)
        if abs(count - cfg.target_nodes) <= cfg.target_band * cfg.target_nodes:
            break
    else:
        raise ConfigError(f"no tree near {cfg.target_nodes} nodes within the given ranges")

    leaves = [0]
    initial: dict[str, float] = {}

    def materialize(node) -> NodeDef:
        kind, kids = node
        children = []
        for kid in kids:
            if kid is None:
                i = leaves[0]
                leaves[0] += 1
                if rng.random() < 0.5:
                    children.append(_condition(i, tier))
                    if cfg.initial_state == "continue":
                        initial[f"in{i}"] = CONTINUE_VALUE[kind]
                    else:
                        initial[f"in{i}"] = rng.choice(DENSE_VALUES)
                else:
                    children.append(_action(i))
            else:
                children.append(materialize(kid))
        return NodeDef(kind, "", tuple(children))

    root = materialize(shape)
    if not any(n.kind == "cond" for n in root.walk()):
        root = _replace_first_leaf(root, _condition(0, tier))
    decls = []
    for n in root.walk():
        if n.kind == "cond":
            key = f"in{n.name[1:]}"
            decls.append(Declaration(key, Scope.INPUT, initial.get(key, 0.0)))
        elif n.kind == "act":
            decls.append(Declaration(f"out{n.name[1:]}", Scope.OUTPUT))
    decls.append(Declaration(NOISE_KEY, Scope.INPUT))
    return TreeDefinition(tuple(decls), root)


def _draw_shape(rng: random.Random, height: int, children: tuple[int, int]):
    # A shape is (kind, [subshape | None]); None marks a leaf slot.
    def draw(level: int):
        kind = rng.choice(CONTROL_CHOICES)
        n = rng.randint(*children)
        if level + 1 == height:
            return (kind, [None] * n)
        return (kind, [draw(level + 1) for _ in range(n)])

    return draw(1)


def _count(shape) -> int:
    if shape is None:
        return 1
    return 1 + sum(_count(k) for k in shape[1])


def _replace_first_leaf(node: NodeDef, leaf: NodeDef) -> NodeDef:
    if node.is_leaf:
        return leaf
    first = _replace_first_leaf(node.children[0], leaf)
    return NodeDef(node.kind, node.name, (first,) + node.children[1:])


def condition_inputs(definition: TreeDefinition) -> list[str]:
    return sorted(
        (key for n in definition.root.walk() if n.condition is not None for key in n.condition.watch),
        key=lambda k: int(k[2:]),
    )


def generate_samples(definition: TreeDefinition, mode: str, count: int, seed: int) -> list[dict[str, float]]:
    rng = random.Random(seed)
    if mode == "sparse":
        return [{NOISE_KEY: float(i + 1)} for i in range(count)]
    if mode != "dense":
        raise ConfigError(f"unknown mode {mode!r}")
    inputs = condition_inputs(definition)
    initial = {d.key: d.initial for d in definition.declarations}
    current = {k: initial.get(k, 0.0) for k in inputs}
    stream = []
    for _ in range(count):
        key = rng.choice(inputs)
        value = rng.choice([v for v in DENSE_VALUES if v != current[key]])
        current[key] = value
        stream.append({key: value})
    return stream


# -- measurement ---------------------------------------------------------


def _canon(outputs: dict[str, float]) -> tuple:
    return tuple(sorted((k, float_to_hex(v)) for k, v in outputs.items()))


def transcript(tree: Tree, stream: Iterable[dict[str, float]], classical: bool) -> list[tuple]:
    step = tree.classical_callback if classical else tree.callback
    first = tree.classical_callback({}) if classical else tree.start()
    return [_canon(first)] + [_canon(step(s)) for s in stream]


def first_divergence(a: list, b: list) -> Optional[int]:
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return i
    return None if len(a) == len(b) else min(len(a), len(b))


def _time_run(definition: TreeDefinition, stream: list, classical: bool) -> int:
    tree = build(definition)
    if classical:
        tree.classical_callback({})
        step = tree.classical_callback
    else:
        tree.start()
        step = tree.callback
    clock = time.perf_counter_ns
    # Same policy as timeit: collector pauses are not charged to either side.
    enabled = gc.isenabled()
    gc.disable()
    try:
        t0 = clock()
        for sample in stream:
            step(sample)
        return clock() - t0
    finally:
        if enabled:
            gc.enable()


@dataclass
class Measurement:
    t_classical_ns: int
    t_abtm_ns: int
    equivalent: bool

    @property
    def ratio(self) -> float:
        return self.t_classical_ns / max(self.t_abtm_ns, 1)


def measure_ratio(
    definition: TreeDefinition,
    stream: list[dict[str, float]],
    repetitions: int = 3,
    gate: bool = True,
) -> Measurement:
    """Best-of-``repetitions`` wall time per engine over the same stream.

    Transcripts are compared first; with ``gate`` a mismatch raises
    :class:`OracleMismatch`, otherwise it is recorded on the result.
    """
    a = transcript(build(definition), stream, classical=False)
    c = transcript(build(definition), stream, classical=True)
    equivalent = a == c
    if gate and not equivalent:
        raise OracleMismatch(f"transcripts diverge at step {first_divergence(a, c)}")
    # Warm-up pass, discarded.
    _time_run(definition, stream, True)
    _time_run(definition, stream, False)
    # Interleaved so slow drift in machine load hits both engines alike.
    t_classical = t_abtm = None
    for _ in range(repetitions):
        tc = _time_run(definition, stream, True)
        ta = _time_run(definition, stream, False)
        t_classical = tc if t_classical is None else min(t_classical, tc)
        t_abtm = ta if t_abtm is None else min(t_abtm, ta)
    return Measurement(t_classical, t_abtm, equivalent)


# -- harness -------------------------------------------------------------


@dataclass
class BenchRow:
    tree_id: int
    nodes: int
    mode: str
    tier: int
    t_classical_ns: int
    t_abtm_ns: int
    R: float
    equivalent: bool


@dataclass
class BenchReport:
    config: dict
    rows: list[BenchRow] = field(default_factory=list)
    # FNV-1a over every generated tree and stream; timings are excluded, so
    # equal seeds give equal digests.
    workload_digest: str = ""

    def ratios(self, mode: str, tier: Optional[int] = None) -> list[float]:
        return [r.R for r in self.rows if r.mode == mode and (tier is None or r.tier == tier)]

    def aggregate(self) -> dict:
        out = {}
        for mode in sorted({r.mode for r in self.rows}):
            per_tier = {}
            for tier in sorted({r.tier for r in self.rows if r.mode == mode}):
                rs = self.ratios(mode, tier)
                per_tier[str(tier)] = {"median_R": statistics.median(rs), "min_R": min(rs), "max_R": max(rs)}
            rs = self.ratios(mode)
            rows = [r for r in self.rows if r.mode == mode]
            out[mode] = {
                "median_R": statistics.median(rs),
                "min_R": min(rs),
                "max_R": max(rs),
                "trees": len({r.tree_id for r in rows}),
                "equivalent": sum(r.equivalent for r in rows),
                "divergent": sum(not r.equivalent for r in rows),
                "tiers": per_tier,
            }
        return out

    def write(self, out_dir: Path) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / "bench.csv"
        with csv_path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["tree_id", "nodes", "mode", "tier", "t_classical_ns", "t_abtm_ns", "R"])
            for r in self.rows:
                writer.writerow([r.tree_id, r.nodes, r.mode, r.tier, r.t_classical_ns, r.t_abtm_ns, f"{r.R:.6g}"])
        json_path = out_dir / "bench.json"
        doc = {"config": self.config, "generator": GENERATOR_NOTES, "aggregate": self.aggregate(),
               "workload_digest": self.workload_digest,
               "published_range_sparse_300_nodes": [10, 70]}
        json_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return csv_path, json_path


GENERATOR_NOTES = {
    "controls": "uniform over seq/sel/skip; no parallel",
    "leaves": "all at the last level; condition or action by fair coin",
    "conditions": "S: in_i > 0.5, F: in_i < -0.5, R: default; tier = comparison terms per guard",
    "actions": "out_i := 1",
    "initial_state": "continue: each condition starts in its parent's continue-on state; random: inputs uniform in {-1, 0, 1}",
    "dense": "one condition input moved to a different value in {-1, 0, 1} per sample",
    "sparse": "writes 'noise', watched by no condition",
}


def run_bench(cfg: BenchConfig, progress=None) -> BenchReport:
    """Generate ``cfg.tree_count`` trees and time both engines on each.

    Classical/asynchronous divergence is recorded per row rather than
    aborting the run; see :func:`check_against_reference` for the gate that
    does abort.
    """
    report = BenchReport(config={k: v for k, v in asdict(cfg).items()})
    digest = _Digest()
    tiers = cfg.tiers
    for tree_id in range(cfg.tree_count):
        tree_seed = cfg.seed * 1_000_003 + tree_id
        tier = tiers[tree_id % len(tiers)]
        definition = generate_random_tree(tree_seed, cfg, tier)
        nodes = sum(1 for _ in definition.root.walk())
        digest.add(print_tree(definition))
        for mode in cfg.modes:
            stream = generate_samples(definition, mode, cfg.samples, tree_seed ^ 0x5EED)
            digest.add(json.dumps(stream, sort_keys=True))
            m = measure_ratio(definition, stream, cfg.repetitions, gate=False)
            report.rows.append(BenchRow(tree_id, nodes, mode, tier, m.t_classical_ns, m.t_abtm_ns, m.ratio, m.equivalent))
        if progress is not None:
            progress(tree_id)
    report.workload_digest = digest.hexdigest()
    return report


class _Digest:
    def __init__(self):
        self.value = 0

    def add(self, text: str) -> None:
        self.value = fnv1a_64(self.value.to_bytes(8, "big") + text.encode())

    def hexdigest(self) -> str:
        return f"{self.value:016x}"


def check_against_reference(definition: TreeDefinition, stream: list[dict[str, float]]) -> None:
    """Both engines must match the slow reference transcription exactly."""
    from .reference import ReferenceTree

    for classical in (False, True):
        fast = transcript(build(definition), stream, classical)
        ref_tree = ReferenceTree(definition)
        step = ref_tree.classical_callback if classical else ref_tree.callback
        first = ref_tree.classical_callback({}) if classical else ref_tree.start()
        slow = [_canon(first)] + [_canon(step(s)) for s in stream]
        if fast != slow:
            engine = "classical" if classical else "asynchronous"
            raise OracleMismatch(f"{engine} engine diverges from reference at step {first_divergence(fast, slow)}")
