"""Sync layer: key naming, the election/agreement tree, dumps and a tiny
in-process hub that delivers every message instantly."""

from collections import deque

import pytest

from abtm.errors import ConfigError, MalformedDump
from abtm.sync import (
    SyncConfig,
    WireMessage,
    apply_var_dump,
    apply_var_frame,
    build_sync_tree,
    callback_with_sync,
    dump_frame,
    is_reserved,
    is_sync_sample,
    join_hash,
    make_executors,
    make_var_dump,
    parse_dump_frame,
    reserved_keys,
    split_hash,
)

MISSION = """
input x;
output y;
seq mission {
  cond go { S: x > 0; F: x < 0; R: default; }
  act copy { y := x; }
}
"""


class Hub:
    """Zero-latency FIFO delivery between live replicas."""

    def __init__(self, n=3, max_delay=1.0, text=MISSION):
        self.exs = make_executors(text, n, max_delay)
        self.alive = set(range(1, n + 1))
        self.outputs = {ex.me: [] for ex in self.exs}
        for ex in self.exs:
            ex.start()

    def send(self, replica, sample):
        queue = deque([(replica, "sample", sample)])
        while queue:
            r, kind, payload = queue.popleft()
            if r not in self.alive:
                continue
            ex = self.exs[r - 1]
            ex.last_mission_outputs = {}
            if kind == "dump":
                apply_var_frame(ex, payload)
            else:
                ex.step(payload)
            if ex.last_mission_outputs:
                self.outputs[r].append(ex.last_mission_outputs)
            for msg in ex.outbox:
                if msg.kind != "receipt":
                    queue += [(o, msg.kind, msg.payload) for o in sorted(self.alive) if o != r]
            ex.outbox.clear()

    def broadcast(self, sample):
        for r in sorted(self.alive):
            self.send(r, sample)

    def hashes(self):
        return {self.exs[r - 1].mission.hash() for r in self.alive}


def fresh(me=1, n=3, max_delay=1.0):
    t = build_sync_tree(SyncConfig(me, n, max_delay))
    t.start()
    return t


# -- keys --------------------------------------------------------------------


def test_reserved_keys():
    keys = reserved_keys(2)
    assert {"trigger_sync", "hash_1_lo", "hash_2_hi", "hash_set_2", "master"} <= keys
    assert all(is_reserved(k) for k in keys)
    assert is_reserved("hash_17") and not is_reserved("hash") and not is_reserved("x")
    assert is_sync_sample({"received_vars": 1.0})
    assert not is_sync_sample({"x": 1.0, "time": 2.0})


@pytest.mark.parametrize("h", [0, 1, 0xFFFFFFFF, 1 << 32, 0xCBF29CE484222325, (1 << 64) - 1])
def test_hash_halves_are_exact(h):
    lo, hi = split_hash(h)
    assert lo < 2 ** 32 and hi < 2 ** 32
    assert join_hash(lo, hi) == h


def test_config_validation():
    for me, n, delay in [(1, 1, 1.0), (0, 3, 1.0), (4, 3, 1.0), (1, 3, -1.0)]:
        with pytest.raises(ConfigError):
            SyncConfig(me, n, delay)


def test_mission_may_not_touch_sync_keys():
    with pytest.raises(ConfigError, match="master"):
        make_executors("act a { master := 1; }", 3)


# -- the sync tree on its own ----------------------------------------------------


def test_equal_hashes_end_the_round():
    t = fresh()
    out = t.callback({"mission_hash_lo": 5.0, "mission_hash_hi": 0.0, "trigger_sync": 1.0})
    assert out.get("hash_set_1") == 1.0
    out = t.callback({"hash_2_lo": 5.0, "hash_2_hi": 0.0, "hash_set_2": 1.0})
    assert "sync_ended" not in out
    out = t.callback({"hash_3_lo": 5.0, "hash_3_hi": 0.0, "hash_set_3": 1.0})
    assert out.get("sync_ended") == 1.0
    assert "send_vars" not in out


def test_nobody_is_elected_before_the_wait_closes():
    t = fresh(me=3)
    out = t.callback({"mission_hash_lo": 1.0, "trigger_sync": 1.0})
    out.update(t.callback({"hash_1_lo": 2.0, "hash_set_1": 1.0}))
    out.update(t.callback({"received_vars": 1.0}))
    assert "elected" not in out and "send_vars" not in out and "sync_ended" not in out
    assert t.memory.get("master") == 0.0


def test_silent_replica_one_is_passed_over_after_timeout():
    t = fresh(me=2, max_delay=0.5)
    t.callback({"time": 10.0})
    t.callback({"mission_hash_lo": 1.0, "trigger_sync": 1.0})
    t.callback({"hash_3_lo": 1.0, "hash_set_3": 1.0})
    assert t.memory.get("hash_set_1") == 0.0
    # The timeout is strict: exactly max_delay is not enough.
    assert "sync_ended" not in t.callback({"time": 10.5})
    out = t.callback({"time": 10.55})
    assert out.get("elected") == 2.0 and out.get("sync_ended") == 1.0


def test_master_with_differing_hashes_sends_vars():
    t = fresh(me=1)
    t.callback({"mission_hash_lo": 1.0, "trigger_sync": 1.0})
    t.callback({"hash_2_lo": 2.0, "hash_set_2": 1.0})
    out = t.callback({"hash_3_lo": 1.0, "hash_set_3": 1.0})
    # send_vars is raised and cleared in one callback; the key is reported.
    assert "send_vars" in out and out.get("sync_ended") == 1.0


def test_slave_with_differing_hashes_waits_for_vars():
    t = fresh(me=3)
    t.callback({"mission_hash_lo": 1.0, "trigger_sync": 1.0})
    t.callback({"hash_1_lo": 2.0, "hash_set_1": 1.0})
    out = t.callback({"hash_2_lo": 1.0, "hash_set_2": 1.0})
    assert "send_vars" not in out and "sync_ended" not in out
    out = t.callback({"received_vars": 1.0})
    assert out.get("sync_ended") == 1.0


# -- executors through the hub ---------------------------------------------------


def test_flip_broadcasts_hash_and_telemetry_does_not():
    ex = make_executors(MISSION, 3)[0]
    ex.start()
    assert callback_with_sync(ex, {"noise": 1.0}) == {}
    assert ex.outbox == []
    callback_with_sync(ex, {"x": 2.0})
    assert [m.kind for m in ex.outbox] == ["hash"]
    assert ex.outbox[0].payload["hash_set_1"] == 1.0


def test_round_with_equal_inputs():
    hub = Hub()
    hub.broadcast({"x": 2.0})
    assert all(ex.rounds == 1 for ex in hub.exs)
    assert all(ex.elected == 1 for ex in hub.exs)
    assert len(hub.hashes()) == 1
    assert all(out == [{"y": 2.0}] for out in hub.outputs.values())


def test_no_flip_no_round():
    hub = Hub()
    for v in range(5):
        hub.broadcast({"noise": float(v)})
    assert all(ex.rounds == 0 for ex in hub.exs)


def test_reset_lets_a_second_round_run():
    hub = Hub(text="input x; output y; act copy { y := x; }")
    hub.broadcast({"x": 1.0})
    for ex in hub.exs:
        mem = ex.sync_memory
        assert not ex.in_round
        assert [mem.get(f"hash_set_{i}") for i in (1, 2, 3)] == [0.0, 0.0, 0.0]
        assert mem.get("send_vars") == mem.get("received_vars") == 0.0
    # An action-only tree never re-triggers; a condition flip does.
    hub = Hub()
    hub.broadcast({"x": 1.0})
    hub.broadcast({"x": -1.0})
    assert all(ex.rounds == 2 for ex in hub.exs)


def test_master_is_lowest_live_index():
    hub = Hub()
    hub.alive.discard(1)
    hub.broadcast({"time": 0.0})
    hub.broadcast({"x": 3.0})
    hub.broadcast({"time": 2.0})
    assert {hub.exs[r - 1].elected for r in hub.alive} == {2}
    assert len(hub.hashes()) == 1


def test_lost_sample_is_repaired_by_the_master():
    hub = Hub()
    hub.send(1, {"x": 4.0})
    hub.send(2, {"x": 4.0})
    # Replica 3 never saw x; it has to stay in round until the master answers.
    hub.broadcast({"time": 5.0})
    assert len(hub.hashes()) == 1
    assert hub.exs[2].mission.memory.get("x") == 4.0
    assert hub.outputs[3] == [{"y": 4.0}]


def test_dump_frames():
    hub = Hub()
    ex = hub.exs[0]
    ex.mission.memory.set({"x": 7.0})
    frame = dump_frame(make_var_dump(ex), ["x"])
    snap, pending = parse_dump_frame(frame)
    assert snap == make_var_dump(ex) and pending == ["x"]
    with pytest.raises(MalformedDump):
        parse_dump_frame({"snapshot": "***"})


def test_truncated_dump_changes_nothing():
    hub = Hub()
    src, dst = hub.exs[0], hub.exs[1]
    src.mission.memory.set({"x": 9.0})
    before = dst.mission.hash()
    with pytest.raises(MalformedDump):
        apply_var_dump(dst, make_var_dump(src)[:-3])
    assert dst.mission.hash() == before
    assert dst.sync_memory.get("received_vars") == 0.0
    assert dst.outbox == []


def test_wire_message_json_is_sorted():
    assert WireMessage("hash", 2, {"b": 1, "a": 2}).to_json() == '{"a": 2, "b": 1, "kind": "hash", "sender": 2}'
