"""State synchronization between redundant executors.

Each executor runs the mission tree plus a small sync tree.  A sample that
flips a mission condition starts a sync round: every replica broadcasts the
hash of its mission memory, waits for the others (or a timeout), elects the
lowest responding index as master and, if hashes differ, the master pushes
its full memory to the slaves.  Only then does the mission tree consume the
pending changes, so all replicas tick from identical state.

The sync tree is generated as tree-file text (:func:`sync_tree_source`) and
built like any other tree.  A few shapes differ from a literal drawing of the
protocol because of how rises propagate:

* conditions that wait return R, not F, so their change is an activating rise;
* the last branch ends in an always-R condition, keeping the root in R so the
  next round starts with a fresh top-down pass;
* conditions leading to actions are gated on the round phase, so a change
  seen early cannot run an action out of turn.
"""

from __future__ import annotations

import base64
import json
import re
from dataclasses import dataclass, field
from typing import Optional

from .core import Tree
from .dsl import TreeDefinition, load_tree, parse_tree
from .errors import ConfigError, MalformedDump
from .expr import format_number
from .memory import Memory

BASE_KEYS = ("trigger_sync", "sync_ended", "send_vars", "received_vars", "master", "time_start")
_PER_REPLICA = re.compile(r"hash_(?:set_)?\d+(?:_lo|_hi)?\Z")

DUMP_FRAME = "__var_dump__"


@dataclass(frozen=True)
class SyncConfig:
    me: int
    n: int
    max_delay: float = 1.0

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError(f"need at least 2 replicas, got {self.n}")
        if not 1 <= self.me <= self.n:
            raise ConfigError(f"replica index {self.me} outside 1..{self.n}")
        if not self.max_delay >= 0:
            raise ConfigError(f"max_delay must be non-negative, got {self.max_delay}")


def reserved_keys(n: int) -> frozenset[str]:
    keys = set(BASE_KEYS)
    for i in range(1, n + 1):
        keys |= {f"hash_{i}", f"hash_{i}_lo", f"hash_{i}_hi", f"hash_set_{i}"}
    return frozenset(keys)


def is_reserved(key: str) -> bool:
    return key in BASE_KEYS or _PER_REPLICA.match(key) is not None


def is_sync_sample(sample: dict) -> bool:
    return any(is_reserved(k) for k in sample)


def reserved_in(definition: TreeDefinition) -> list[str]:
    """Sync keys a mission tree declares or touches; should be empty."""
    keys = {d.key for d in definition.declarations} | definition.referenced()
    return sorted(k for k in keys if is_reserved(k))


def split_hash(h: int) -> tuple[float, float]:
    """64-bit hash as two floats that hold 32-bit halves exactly."""
    return float(h & 0xFFFFFFFF), float(h >> 32)


def join_hash(lo: float, hi: float) -> int:
    return (int(hi) << 32) | int(lo)


# -- sync tree -----------------------------------------------------------


def _latch(tag: str, body: list[str], pad: str) -> list[str]:
    # Skipper-based latch: remembers the first S or F of ``body`` until
    # ``<tag>_mem`` is reset to 0.
    i = pad + "    "
    return [
        f"{pad}skip {tag}_latch {{",
        f"{i}cond {tag}_latched {{ S: {tag}_sub == 1 and {tag}_mem == 1; F: {tag}_sub == 2 and {tag}_mem == 1; R: default; }}",
        f"{i}sel {{",
        f"{i}    seq {{",
        *(f"{i}        {line}" for line in body),
        f"{i}        act {tag}_keep_s {{ {tag}_mem := 1; {tag}_sub := 1; }}",
        f"{i}    }}",
        f"{i}    act {tag}_keep_f {{ {tag}_mem := 1; {tag}_sub := 2; }}",
        f"{i}}}",
        f"{pad}}}",
    ]


def _all_same(n: int) -> str:
    terms = []
    for i in range(1, n + 1):
        for j in range(i + 1, n + 1):
            terms.append(
                f"(hash_set_{i} == 0 or hash_set_{j} == 0 or "
                f"(hash_{i}_lo == hash_{j}_lo and hash_{i}_hi == hash_{j}_hi))"
            )
    return " and ".join(terms)


def sync_tree_source(cfg: SyncConfig) -> str:
    n, me = cfg.n, cfg.me
    ids = range(1, n + 1)
    lines = ["input time;"]
    for key in ("trigger_sync", "received_vars", "time_start", "master",
                "mission_hash_lo", "mission_hash_hi",
                "send_mem", "send_sub", "wait_mem", "wait_sub"):
        lines.append(f"local {key};")
    for i in ids:
        if i == me:
            lines += [f"output hash_{i}_lo;", f"output hash_{i}_hi;", f"output hash_set_{i};"]
        else:
            lines += [f"local hash_{i}_lo;", f"local hash_{i}_hi;", f"local hash_set_{i};"]
    lines += ["output send_vars;", "output sync_ended;", "output elected = 1;", ""]

    any_set = " or ".join(f"hash_set_{i} == 1" for i in ids)
    same = _all_same(n)
    body = ["seq sync_tree {"]
    # 1. start
    body.append(f"    cond start {{ S: trigger_sync == 1 or {any_set}; R: default; }}")
    # 2. latched hash broadcast
    body += _latch("send", [
        f"act send_hash {{ hash_{me}_lo := mission_hash_lo; hash_{me}_hi := mission_hash_hi;"
        f" hash_set_{me} := 1; time_start := time; }}",
    ], "    ")
    # 3. wait for all hashes or the timeout, then elect
    wait = ["skip wait {", "    seq all_hashes {"]
    wait += [f"        cond has_{i} {{ S: hash_set_{i} == 1; R: default; }}" for i in ids]
    wait += [
        "    }",
        f"    cond timeout {{ S: hash_set_{me} == 1 and time - time_start > "
        f"{format_number(cfg.max_delay)}; R: default; }}",
        "}",
    ]
    body.append("    seq elect {")
    body += _latch("wait", wait, "        ")
    body.append("        sel choose_master {")
    # Every branch is gated on wait_mem with an R default: a condition flip
    # can activate this selector before the wait latch closes, and it must
    # not elect anyone then.
    for i in ids:
        alive = f"S: wait_mem == 1 and hash_set_{i} == 1; F: wait_mem == 1; R: default;"
        if i == n:
            alive = "S: wait_mem == 1; R: default;"
        body += [
            "            seq {",
            f"                cond alive_{i} {{ {alive} }}",
            f"                act master_{i} {{ master := {i}; elected := {i}; }}",
            "            }",
        ]
    body += ["        }", "    }"]
    # 4. compare hashes; master pushes, slaves wait for the push
    body += [
        "    sel decide {",
        f"        cond same_hashes {{ S: {same}; F: default; }}",
        "        sel {",
        "            seq {",
        f"                cond i_am_master {{ S: master == {me} and not ({same}); F: default; }}",
        "                act send { send_vars := 1; }",
        "            }",
        "            cond vars_received { S: received_vars == 1; R: default; }",
        "        }",
        "    }",
    ]
    # 5. finish and clean up
    resets = " ".join(f"hash_set_{i} := 0;" for i in ids)
    body += [
        "    seq finish {",
        f"        act cleanup {{ sync_ended := sync_ended + 1; trigger_sync := 0; {resets}"
        " received_vars := 0; send_vars := 0; master := 0; send_mem := 0; wait_mem := 0; }",
        "        cond rearm { R: default; }",
        "    }",
        "}",
    ]
    return "\n".join(lines + body) + "\n"


def build_sync_tree(cfg: SyncConfig) -> Tree:
    return load_tree(sync_tree_source(cfg))


# -- wire messages -------------------------------------------------------


@dataclass(frozen=True)
class WireMessage:
    kind: str  # "hash", "dump" or "receipt"
    sender: int
    payload: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "sender": self.sender, **self.payload}, sort_keys=True)


def dump_frame(snapshot: bytes, pending: Optional[list[str]] = None) -> dict:
    frame = {DUMP_FRAME: 1, "snapshot": base64.b64encode(snapshot).decode("ascii")}
    if pending is not None:
        frame["pending"] = sorted(pending)
    return frame


def parse_dump_frame(frame: dict) -> tuple[bytes, Optional[list[str]]]:
    try:
        snapshot = base64.b64decode(frame["snapshot"], validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedDump(f"bad dump frame: {exc}") from None
    return snapshot, frame.get("pending")


# -- executor ------------------------------------------------------------


class Executor:
    """Mission tree plus sync tree for one replica; calls must be serialized."""

    def __init__(self, mission: Tree, cfg: SyncConfig):
        self.mission = mission
        self.cfg = cfg
        self.sync_tree = build_sync_tree(cfg)
        self.outbox: list[WireMessage] = []
        self.rounds = 0
        self.last_mission_outputs: dict[str, float] = {}
        self.round_ended = False

    @property
    def me(self) -> int:
        return self.cfg.me

    @property
    def sync_memory(self) -> Memory:
        return self.sync_tree.memory

    @property
    def in_round(self) -> bool:
        return self.sync_memory.get(f"hash_set_{self.me}") == 1.0

    @property
    def elected(self) -> int:
        return int(self.sync_memory.get("elected"))

    def start(self) -> dict[str, float]:
        self.sync_tree.start()
        out = self.mission.start()
        self.last_mission_outputs = out
        return dict(out)

    def _sync_step(self, sample: dict[str, float]) -> dict[str, float]:
        me = self.me
        if not self.in_round:
            # Branch 2 reads the mission hash when the round opens.
            lo, hi = split_hash(self.mission.hash())
            self.sync_memory.set({"mission_hash_lo": lo, "mission_hash_hi": hi})
        res = self.sync_tree.callback(sample)
        if res.get(f"hash_set_{me}") == 1.0:
            mem = self.sync_memory
            self.outbox.append(WireMessage("hash", me, {
                f"hash_{me}_lo": mem.get(f"hash_{me}_lo"),
                f"hash_{me}_hi": mem.get(f"hash_{me}_hi"),
                f"hash_set_{me}": 1.0,
            }))
        if "send_vars" in res:
            # Taken before the mission consumes its pending changes.
            self.outbox.append(WireMessage("dump", me, make_var_frame(self)))
        if "sync_ended" in res:
            self.rounds += 1
            self.round_ended = True
            mission_res = self.mission.callback({})
            self.last_mission_outputs = mission_res
            return {**res, **mission_res}
        return res

    def step(self, sample: dict[str, float]) -> dict[str, float]:
        self.last_mission_outputs = {}
        self.round_ended = False
        return callback_with_sync(self, sample)


def callback_with_sync(ex: Executor, sample: dict[str, float]) -> dict[str, float]:
    """One serialized callback on a replica: mission sample or sync message."""
    if not is_sync_sample(sample):
        ex.mission.memory.set(sample)
        time_changed = "time" in sample
        if time_changed:
            ex.sync_memory.set({"time": sample["time"]})
        if ex.in_round:
            # No nested rounds; the new changes wait in the dirty set.  A new
            # time may still fire the timeout.
            return ex._sync_step({}) if time_changed else {}
        if not ex.mission.pending_conditions():
            return {}
        sample = {"trigger_sync": 1.0}
    return ex._sync_step(sample)


def make_var_dump(ex: Executor) -> bytes:
    return ex.mission.memory.canonical_snapshot()


def make_var_frame(ex: Executor) -> dict:
    return dump_frame(make_var_dump(ex), sorted(ex.mission.memory.dirty))


def apply_var_dump(ex: Executor, dump: bytes, pending: Optional[list[str]] = None) -> dict[str, float]:
    """Adopt the master's memory, then report receipt to the sync tree.

    ``pending`` is the master's unconsumed dirty set; adopting it makes the
    post-sync mission callback see the same changes the master sees.
    """
    ex.mission.memory.apply_snapshot(dump)
    if pending is not None:
        ex.mission.memory.adopt_dirty(pending)
    ex.outbox.append(WireMessage("receipt", ex.me, {"received_vars": 1.0}))
    return callback_with_sync(ex, {"received_vars": 1.0})


def apply_var_frame(ex: Executor, frame: dict) -> dict[str, float]:
    snapshot, pending = parse_dump_frame(frame)
    return apply_var_dump(ex, snapshot, pending)


def make_executors(definition: TreeDefinition | str, n: int, max_delay: float = 1.0) -> list[Executor]:
    from .dsl import build

    if isinstance(definition, str):
        definition = parse_tree(definition)
    clash = reserved_in(definition)
    if clash:
        raise ConfigError(f"mission tree uses sync keys: {', '.join(clash)}")
    return [Executor(build(definition), SyncConfig(i, n, max_delay)) for i in range(1, n + 1)]
