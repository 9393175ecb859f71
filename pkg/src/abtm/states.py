"""Node states and tick types.

Both are small ``IntEnum``s so they can index the propagation tables
directly.  Tick types are numbered by merge dominance: when a node already
queued is inserted again, the larger tick type wins.
"""

import enum


class NodeState(enum.IntEnum):
    R = 0  # running
    S = 1  # success
    F = 2  # failure

    @property
    def symbol(self) -> str:
        return self.name


class TickType(enum.IntEnum):
    NONE = 0
    CR = 1  # checking rise
    CF = 2  # checking fall
    AR = 3  # activating rise
    AF = 4  # activating fall


R, S, F = NodeState.R, NodeState.S, NodeState.F
NONE, CR, CF, AR, AF = TickType.NONE, TickType.CR, TickType.CF, TickType.AR, TickType.AF
