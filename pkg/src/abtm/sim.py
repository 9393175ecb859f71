"""Deterministic discrete-event simulation of redundant executors.

Virtual time only.  Every delivery is an event ordered by
``(time, sequence number, replica)``; sequence numbers are handed out when an
event is scheduled, so input events precede the sync traffic they cause at
the same instant.  Links are FIFO with zero latency unless a fault rule says
otherwise.  Crashes are crash-stop.

Scenario files are JSON::

    {
      "replicas": 3,
      "tree": "mission.abtm",
      "max_delay": 0.5,
      "time_tick": 0.05,
      "duration": 60,
      "seed": 7,
      "schedule": [
        {"time": 1.5, "sample": {"pos": 10},
         "repeat": {"every": 3, "count": 19, "increment": {"pos": 10}}}
      ],
      "faults": [{"from": "input", "to": 2, "keys": ["pos"], "action": "drop", "limit": 1}],
      "crashes": [{"replica": "master", "time": "random", "window": [10, 20]}]
    }

``tree`` is resolved relative to the scenario file; ``tree_source`` may hold
the tree text inline instead.
"""

from __future__ import annotations

import heapq
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Optional

from .dsl import TreeDefinition, parse_tree
from .errors import AbtmError, ConfigError, ExecutorError
from .sync import Executor, apply_var_frame, is_reserved, make_executors

INPUT = "input"


# -- configuration -------------------------------------------------------


@dataclass(frozen=True)
class ScheduledSample:
    time: float
    sample: dict[str, float]
    targets: Optional[tuple[int, ...]] = None  # None: every replica


@dataclass(frozen=True)
class FaultRule:
    source: Any  # "input", "*" or a replica index
    target: Any  # "*" or a replica index
    keys: tuple[str, ...] = ()  # empty matches every message
    action: str = "drop"  # "drop" or "delay"
    delay: float = 0.0
    window: tuple[float, float] = (0.0, math.inf)
    limit: Optional[int] = None

    def matches(self, source, target: int, keys, now: float) -> bool:
        if self.source != "*" and self.source != source:
            return False
        if self.target != "*" and self.target != target:
            return False
        if not self.window[0] <= now <= self.window[1]:
            return False
        return not self.keys or any(k in keys for k in self.keys)


@dataclass(frozen=True)
class Crash:
    replica: Any  # index or "master"
    time: float


@dataclass(frozen=True)
class ScenarioConfig:
    replicas: int
    definition: TreeDefinition
    max_delay: float = 0.5
    time_tick: float = 0.05
    duration: float = 10.0
    seed: int = 0
    schedule: tuple[ScheduledSample, ...] = ()
    faults: tuple[FaultRule, ...] = ()
    crashes: tuple[Crash, ...] = ()
    tree_name: str = ""

    def __post_init__(self):
        if self.replicas < 2:
            raise ConfigError("a scenario needs at least 2 replicas")
        if not self.time_tick > 0:
            raise ConfigError(f"time_tick must be positive, got {self.time_tick}")
        if not self.duration >= 0:
            raise ConfigError(f"duration must be non-negative, got {self.duration}")
        for s in self.schedule:
            if not 0 <= s.time <= self.duration:
                raise ConfigError(f"sample at t={s.time} outside [0, {self.duration}]")
            for key in s.sample:
                if is_reserved(key):
                    raise ConfigError(f"scheduled sample writes sync key {key!r}")
            for r in s.targets or ():
                self._check_replica(r)
        for c in self.crashes:
            if c.replica != "master":
                self._check_replica(c.replica)
            if not 0 <= c.time <= self.duration:
                raise ConfigError(f"crash at t={c.time} outside [0, {self.duration}]")

    def _check_replica(self, r) -> None:
        if not isinstance(r, int) or not 1 <= r <= self.replicas:
            raise ConfigError(f"no replica {r!r}")

    def without_faults(self) -> "ScenarioConfig":
        """Same run with no faults and no crashes: the reference."""
        return ScenarioConfig(self.replicas, self.definition, self.max_delay, self.time_tick,
                              self.duration, self.seed, self.schedule, (), (), self.tree_name)

    # -- loading ----------------------------------------------------------

    @classmethod
    def from_file(cls, path: str | Path) -> "ScenarioConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(data, path.parent)

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path = ".") -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("scenario must be a JSON object")
        try:
            return cls._from_dict(data, Path(base_dir))
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad scenario: {type(exc).__name__}: {exc}") from None

    @classmethod
    def _from_dict(cls, data: dict, base: Path) -> "ScenarioConfig":
        if "tree_source" in data:
            text, name = data["tree_source"], "<inline>"
        else:
            tree_path = base / data["tree"]
            try:
                text = tree_path.read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read tree {tree_path}: {exc}") from None
            name = str(data["tree"])
        try:
            definition = parse_tree(text)
        except AbtmError as exc:
            raise ConfigError(f"tree {name}: {exc}") from None
        seed = int(data.get("seed", 0))
        duration = float(data.get("duration", 10.0))
        schedule = []
        for entry in data.get("schedule", []):
            schedule += _expand(entry)
        faults = [_fault(f) for f in data.get("faults", [])]
        rng = random.Random(seed)
        crashes = []
        for c in data.get("crashes", []):
            t = c["time"]
            if t == "random":
                lo, hi = c.get("window", [0.0, duration])
                t = rng.uniform(float(lo), float(hi))
            crashes.append(Crash(c["replica"], float(t)))
        return cls(
            replicas=int(data.get("replicas", 3)),
            definition=definition,
            max_delay=float(data.get("max_delay", 0.5)),
            time_tick=float(data.get("time_tick", 0.05)),
            duration=duration,
            seed=seed,
            schedule=tuple(schedule),
            faults=tuple(faults),
            crashes=tuple(crashes),
            tree_name=name,
        )


def _targets(value) -> Optional[tuple[int, ...]]:
    if value in (None, "all", "*"):
        return None
    if isinstance(value, int):
        return (value,)
    return tuple(int(v) for v in value)


def _expand(entry: dict) -> list[ScheduledSample]:
    t0 = float(entry["time"])
    sample = {k: float(v) for k, v in entry["sample"].items()}
    targets = _targets(entry.get("target"))
    out = [ScheduledSample(t0, sample, targets)]
    rep = entry.get("repeat")
    if rep:
        every = float(rep["every"])
        if not every > 0:
            raise ConfigError("repeat.every must be positive")
        inc = {k: float(v) for k, v in rep.get("increment", {}).items()}
        current = dict(sample)
        for i in range(1, int(rep["count"]) + 1):
            current = {k: v + inc.get(k, 0.0) for k, v in current.items()}
            out.append(ScheduledSample(_grid(t0 + i * every), dict(current), targets))
    return out


def _fault(f: dict) -> FaultRule:
    action = f.get("action", "drop")
    if action not in ("drop", "delay"):
        raise ConfigError(f"unknown fault action {action!r}")
    window = tuple(float(x) for x in f.get("window", (0.0, math.inf)))
    limit = f.get("limit")
    return FaultRule(
        source=f.get("from", "*"),
        target=f.get("to", "*"),
        keys=tuple(f.get("keys", ())),
        action=action,
        delay=float(f.get("delay", 0.0)),
        window=window,  # type: ignore[arg-type]
        limit=None if limit is None else int(limit),
    )


def _grid(t: float) -> float:
    # Keeps k * tick style times free of trailing float noise.
    return round(t, 9)


def inject_time(cfg: ScenarioConfig) -> Iterator[dict[str, float]]:
    """``{"time": t}`` at 0, tick, 2 tick, ... up to the duration."""
    if not cfg.time_tick > 0:
        raise ConfigError("time_tick must be positive")
    count = int(math.floor(cfg.duration / cfg.time_tick + 1e-9)) + 1
    for k in range(count):
        yield {"time": _grid(k * cfg.time_tick)}


def check_consistency(executors: list[Executor], alive: Optional[set[int]] = None) -> bool:
    hashes = {ex.mission.hash() for ex in executors if alive is None or ex.me in alive}
    return len(hashes) <= 1


# -- report --------------------------------------------------------------


@dataclass
class SimReport:
    config: dict
    transcripts: dict[int, list[dict]] = field(default_factory=dict)
    rounds: list[dict] = field(default_factory=list)
    master_history: list[dict] = field(default_factory=list)
    crashes: list[dict] = field(default_factory=list)
    wire_log: list[str] = field(default_factory=list)
    counts: dict = field(default_factory=dict)
    verdict: bool = True

    def external(self) -> list[dict]:
        """The scenario's external output: unsuppressed entries in time order."""
        out = []
        for replica, entries in self.transcripts.items():
            out += [{**e, "replica": replica} for e in entries if not e["suppressed"]]
        out.sort(key=lambda e: (e["t"], e["seq"]))
        return out

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "verdict": self.verdict,
            "counts": self.counts,
            "master_history": self.master_history,
            "crashes": self.crashes,
            "rounds": self.rounds,
            "transcripts": {str(k): v for k, v in sorted(self.transcripts.items())},
            "external": self.external(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_text(self) -> str:
        c = self.counts
        lines = [
            f"scenario: {self.config.get('tree')} with {self.config.get('replicas')} replicas, "
            f"seed {self.config.get('seed')}, duration {self.config.get('duration')}",
            f"verdict: {'consistent' if self.verdict else 'INCONSISTENT'}",
            f"samples delivered: {c.get('samples')}  time ticks: {c.get('time_ticks')}",
            f"sync rounds: {c.get('sync_rounds')} completed, {c.get('incomplete_rounds')} incomplete"
            f"  (per-sample baseline: {c.get('baseline_sync_calls')})",
            f"external outputs: {c.get('outputs')}",
            "master history: " + ", ".join(f"t={m['t']:g} -> {m['master']}" for m in self.master_history),
        ]
        for crash in self.crashes:
            lines.append(f"crash: replica {crash['replica']} at t={crash['t']:g}")
        bad = [r for r in self.rounds if r["complete"] and not r["equal"]]
        for r in bad:
            lines.append(f"round {r['round']} ended with differing hashes: {r['hashes']}")
        return "\n".join(lines) + "\n"


# -- engine --------------------------------------------------------------


class Simulation:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.executors = make_executors(cfg.definition, cfg.replicas, cfg.max_delay)
        self.alive = set(range(1, cfg.replicas + 1))
        self.now = 0.0
        self._seq = 0
        self._queue: list[tuple[float, int, int]] = []
        self._payload: dict[int, tuple[str, Any, Any]] = {}
        self._fault_hits = [0] * len(cfg.faults)
        self._link_clock: dict[tuple[Any, int], float] = {}
        self.master = 1
        self.report = SimReport(config=self._config_summary())
        self.report.transcripts = {ex.me: [] for ex in self.executors}
        self.report.master_history.append({"t": 0.0, "master": 1})
        self._round_hashes: dict[int, dict[int, str]] = {}
        self._round_meta: dict[int, dict] = {}
        self._round_open: dict[int, float] = {}
        self._out_seq = 0
        self.samples = 0
        self.time_ticks = 0

    def _config_summary(self) -> dict:
        c = self.cfg
        return {"replicas": c.replicas, "tree": c.tree_name, "max_delay": c.max_delay,
                "time_tick": c.time_tick, "duration": c.duration, "seed": c.seed,
                "scheduled": len(c.schedule), "faults": len(c.faults), "crashes": len(c.crashes)}

    # -- scheduling -------------------------------------------------------

    def _push(self, t: float, replica: int, kind: str, source: Any, payload: Any) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (t, self._seq, replica))
        self._payload[self._seq] = (kind, source, payload)

    def _route(self, source: Any, target: int, kind: str, payload: dict) -> None:
        """Send through the fault rules; keeps each link FIFO."""
        t = self.now
        keys = payload.keys()
        for i, rule in enumerate(self.cfg.faults):
            if rule.limit is not None and self._fault_hits[i] >= rule.limit:
                continue
            if rule.matches(source, target, keys, self.now):
                self._fault_hits[i] += 1
                if rule.action == "drop":
                    return
                t += rule.delay
        link = (source, target)
        t = max(t, self._link_clock.get(link, t))
        self._link_clock[link] = t
        self._push(_grid(t), target, kind, source, payload)

    def _schedule_inputs(self) -> None:
        # Inputs are routed at their own time; pre-sort so sequence numbers
        # follow (time, file order) with time ticks first.
        events = []
        for i, s in enumerate(inject_time(self.cfg)):
            events.append((s["time"], 0, i, None, s))
        for i, s in enumerate(self.cfg.schedule):
            events.append((s.time, 1, i, s.targets, s.sample))
        for i, c in enumerate(self.cfg.crashes):
            events.append((c.time, 2, i, None, c))
        events.sort(key=lambda e: (e[0], e[1], e[2]))
        for t, kind, _, targets, payload in events:
            if kind == 2:
                self._push(t, 0, "crash", None, payload)
            else:
                # Routed lazily so fault windows see the delivery time.
                self._push(t, 0, "input", targets, payload)

    # -- running ----------------------------------------------------------

    def run(self) -> SimReport:
        for ex in self.executors:
            out = self._guard(ex, ex.start)
            self._record(ex, out)
        self._schedule_inputs()
        while self._queue:
            t, seq, replica = heapq.heappop(self._queue)
            kind, source, payload = self._payload.pop(seq)
            self.now = t
            if kind == "crash":
                self._crash(payload)
            elif kind == "input":
                if "time" in payload:
                    self.time_ticks += len(payload) == 1
                for target in source or range(1, self.cfg.replicas + 1):
                    self._route(INPUT, target, "sample", payload)
            elif replica in self.alive:
                self._deliver(self.executors[replica - 1], kind, payload)
        return self._finish()

    def _crash(self, crash: Crash) -> None:
        replica = self.master if crash.replica == "master" else crash.replica
        if replica in self.alive:
            self.alive.discard(replica)
            self.report.crashes.append({"replica": replica, "t": self.now})

    def _guard(self, ex: Executor, fn, *args):
        try:
            return fn(*args)
        except AbtmError as exc:
            raise ExecutorError(ex.me, self.now, exc) from exc

    def _deliver(self, ex: Executor, kind: str, payload: dict) -> None:
        was_in_round = ex.in_round
        ex.last_mission_outputs = {}
        ex.round_ended = False
        if kind == "dump":
            self._guard(ex, apply_var_frame, ex, payload)
        else:
            if kind == "sample":
                self.samples += 1
            self._guard(ex, ex.step, payload)
        if not was_in_round and ex.in_round:
            self._round_open.setdefault(ex.rounds + 1, self.now)
        elif not was_in_round and ex.round_ended:
            self._round_open.setdefault(ex.rounds, self.now)
        self._record(ex, ex.last_mission_outputs)
        if ex.elected != self.master and ex.round_ended:
            self.master = ex.elected
            self.report.master_history.append({"t": self.now, "master": self.master})
        if ex.round_ended:
            self._round_end(ex)
        self._flush(ex)

    def _flush(self, ex: Executor) -> None:
        for msg in ex.outbox:
            self.report.wire_log.append(f"{self.now:g} {msg.to_json()}")
            if msg.kind == "receipt":
                continue
            for other in range(1, self.cfg.replicas + 1):
                if other != ex.me:
                    self._route(ex.me, other, msg.kind, msg.payload)
        ex.outbox.clear()

    def _record(self, ex: Executor, outputs: dict[str, float]) -> None:
        if not outputs:
            return
        self._out_seq += 1
        self.report.transcripts[ex.me].append({
            "t": self.now,
            "seq": self._out_seq,
            "outputs": {k: outputs[k] for k in sorted(outputs)},
            "suppressed": ex.elected != ex.me,
        })

    def _round_end(self, ex: Executor) -> None:
        k = ex.rounds
        self._round_hashes.setdefault(k, {})[ex.me] = f"{ex.mission.hash():016x}"
        meta = self._round_meta.setdefault(k, {"start": self._round_open.get(k, self.now)})
        meta["end"] = self.now
        meta["master"] = ex.elected

    def _finish(self) -> SimReport:
        verdict = True
        complete = 0
        for k in sorted(self._round_hashes):
            hashes = self._round_hashes[k]
            # Complete when every replica still alive has closed the round.
            done = all(r in hashes for r in self.alive)
            equal = len(set(hashes.values())) <= 1
            if done:
                complete += 1
                verdict = verdict and equal
            meta = self._round_meta[k]
            self.report.rounds.append({
                "round": k,
                "start": meta["start"],
                "end": meta["end"],
                "master": meta["master"],
                "hashes": {str(r): h for r, h in sorted(hashes.items())},
                "complete": done,
                "equal": equal,
            })
        self.report.verdict = verdict
        self.report.counts = {
            "samples": self.samples,
            "time_ticks": self.time_ticks,
            "baseline_sync_calls": self.time_ticks,
            "sync_rounds": complete,
            "incomplete_rounds": len(self._round_hashes) - complete,
            "rounds_per_replica": {str(ex.me): ex.rounds for ex in self.executors},
            "outputs": len(self.report.external()),
            "alive": sorted(self.alive),
            "final_hashes": {str(ex.me): f"{ex.mission.hash():016x}" for ex in self.executors},
        }
        return self.report


def run_scenario(cfg: ScenarioConfig) -> SimReport:
    return Simulation(cfg).run()


def output_values(entries: list[dict]) -> list[dict]:
    """Transcript entries reduced to their output maps, for comparisons."""
    return [e["outputs"] for e in entries]

