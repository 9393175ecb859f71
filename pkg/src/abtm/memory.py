"""Blackboard memory shared by every node of a tree.

All variables are binary64 floats addressed by string keys.  Each variable is
either an ``Input`` (written by incoming samples) or an ``Output`` (its changes
are returned from a callback).  Variables flagged ``local`` are excluded from
the canonical snapshot and therefore from the hash.
"""

from __future__ import annotations

import enum
import struct

from .errors import DuplicateKey, MalformedDump, ReservedKey

STATE_PREFIX = "__state__/"

# Keys that are replica-local unless declared otherwise.
DEFAULT_LOCAL_KEYS = frozenset({"time"})

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

_pack = struct.Struct(">d").pack
_unpack = struct.Struct(">d").unpack


class Scope(enum.Enum):
    INPUT = "input"
    OUTPUT = "output"


def float_to_hex(value: float) -> str:
    """16 lowercase hex digits of the big-endian IEEE-754 bit pattern."""
    return _pack(value).hex()


def hex_to_float(text: str) -> float:
    if len(text) != 16:
        raise ValueError(f"expected 16 hex digits, got {text!r}")
    return _unpack(bytes.fromhex(text))[0]


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def _same_bits(a: float, b: float) -> bool:
    # Plain == treats 0.0/-0.0 as equal and NaN as unequal; neither matches
    # what the hash sees.
    if a == b:
        return a != 0.0 or _pack(a) == _pack(b)
    return a != a and b != b and _pack(a) == _pack(b)


class Memory:
    """Scoped key-value store with change tracking.

    ``dirty`` collects keys changed by :meth:`set` since the last call to
    :meth:`clear_dirty`; ``output_log`` collects changed Output variables
    until :meth:`drain_output_changes`.
    """

    def __init__(self) -> None:
        self._values: dict[str, float] = {}
        self._scope: dict[str, Scope] = {}
        self._local: set[str] = set()
        self._outputs: set[str] = set()
        self.dirty: set[str] = set()
        # Value each dirty key had when it first became dirty.  Entries for
        # keys no longer in ``dirty`` are stale and get overwritten.
        self._baseline: dict[str, float] = {}
        self.output_log: dict[str, float] = {}

    # -- declaration -----------------------------------------------------

    def declare(
        self,
        key: str,
        scope: Scope = Scope.INPUT,
        initial: float = 0.0,
        local: bool = False,
    ) -> None:
        if key.startswith(STATE_PREFIX):
            raise ReservedKey(key)
        if key in self._values:
            raise DuplicateKey(key)
        self._declare(key, scope, float(initial), local)

    def _declare(self, key: str, scope: Scope, initial: float, local: bool) -> None:
        self._values[key] = initial
        self._scope[key] = scope
        if scope is Scope.OUTPUT:
            self._outputs.add(key)
        if local:
            self._local.add(key)

    def _auto_declare(self, key: str) -> None:
        self._declare(key, Scope.INPUT, 0.0, key in DEFAULT_LOCAL_KEYS)

    def declare_state(self, key: str, initial: float = 0.0) -> None:
        """Engine-only: reserve a node-state slot."""
        if not key.startswith(STATE_PREFIX):
            raise ValueError(f"state keys must start with {STATE_PREFIX!r}")
        if key in self._values:
            raise DuplicateKey(key)
        self._declare(key, Scope.INPUT, float(initial), False)

    # -- access ----------------------------------------------------------

    def __contains__(self, key: str) -> bool:
        return key in self._values

    def __len__(self) -> int:
        return len(self._values)

    def keys(self):
        return self._values.keys()

    def scope(self, key: str) -> Scope:
        return self._scope[key]

    def is_local(self, key: str) -> bool:
        return key in self._local

    def get(self, key: str) -> float:
        try:
            return self._values[key]
        except KeyError:
            self._auto_declare(key)
            return 0.0

    def set(self, changes: dict[str, float]) -> set[str]:
        """Apply ``changes``; return the keys whose stored value changed."""
        values = self._values
        changed: set[str] = set()
        for key, value in changes.items():
            old = values.get(key)
            if old is None:
                if key.startswith(STATE_PREFIX):
                    raise ReservedKey(key)
                self._auto_declare(key)
                old = 0.0
            elif old == value and old != 0.0:
                continue
            value = float(value)
            if _same_bits(old, value):
                continue
            values[key] = value
            changed.add(key)
            self._mark(key, old, value)
            if key in self._outputs:
                self.output_log[key] = value
        return changed

    def _mark(self, key: str, old: float, new: float) -> None:
        dirty = self.dirty
        if key not in dirty:
            dirty.add(key)
            self._baseline[key] = old
            return
        base = self._baseline.get(key)
        if base is not None and _same_bits(base, new):
            # Back to its value at the last clear, so no longer a change.
            dirty.discard(key)

    def assign(self, key: str, value: float) -> bool:
        """Single-key :meth:`set` used by actions; True if the value changed."""
        values = self._values
        old = values.get(key)
        if old is None:
            if key.startswith(STATE_PREFIX):
                raise ReservedKey(key)
            self._auto_declare(key)
            old = 0.0
        if _same_bits(old, value):
            return False
        values[key] = value
        self._mark(key, old, value)
        if key in self._outputs:
            self.output_log[key] = value
        return True

    def adopt_dirty(self, keys) -> None:
        """Replace the dirty set with ``keys``; they stay dirty until cleared."""
        self.dirty = set(keys)
        for key in self.dirty:
            self._baseline.pop(key, None)

    def clear_dirty(self) -> set[str]:
        dirty, self.dirty = self.dirty, set()
        return dirty

    def drain_output_changes(self) -> dict[str, float]:
        log = self.output_log
        if not log:
            return {}
        self.output_log = {}
        return log

    # -- snapshot / hash -------------------------------------------------

    def canonical_snapshot(self) -> bytes:
        local = self._local
        values = self._values
        # Sort by UTF-8 bytes, not code points.
        keys = sorted((k for k in values if k not in local), key=lambda k: k.encode())
        return "".join(f"{k}={_pack(values[k]).hex()};" for k in keys).encode()

    def hash(self) -> int:
        return fnv1a_64(self.canonical_snapshot())

    def apply_snapshot(self, dump: bytes) -> None:
        """Overwrite non-local variables from a canonical snapshot.

        The dump is fully parsed before anything is written, so a malformed
        dump leaves the memory untouched.  Nothing is marked dirty.
        """
        try:
            text = dump.decode()
        except UnicodeDecodeError as exc:
            raise MalformedDump(str(exc)) from None
        if text and not text.endswith(";"):
            raise MalformedDump("dump does not end with ';'")
        parsed: dict[str, float] = {}
        for entry in text.split(";")[:-1]:
            key, sep, hexval = entry.rpartition("=")
            if not sep or not key:
                raise MalformedDump(f"bad entry {entry!r}")
            try:
                parsed[key] = hex_to_float(hexval)
            except ValueError as exc:
                raise MalformedDump(str(exc)) from None
        for key in [k for k in self._values if k not in self._local and k not in parsed]:
            del self._values[key]
            del self._scope[key]
            self._outputs.discard(key)
            self.dirty.discard(key)
        for key, value in parsed.items():
            if key not in self._values:
                self._declare(key, Scope.INPUT, value, False)
            elif key not in self._local:
                self._values[key] = value

    def copy(self) -> "Memory":
        other = Memory()
        other._values = dict(self._values)
        other._scope = dict(self._scope)
        other._local = set(self._local)
        other._outputs = set(self._outputs)
        other.dirty = set(self.dirty)
        other._baseline = dict(self._baseline)
        other.output_log = dict(self.output_log)
        return other

    def __repr__(self) -> str:
        return f"Memory({len(self._values)} variables, {len(self.dirty)} dirty)"
