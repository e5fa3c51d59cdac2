"""ReLU pairs: a backward-facing and a forward-facing variable with ``f = max(0, b)``."""
from __future__ import annotations

import enum
from dataclasses import dataclass


class Phase(enum.Enum):
    UNDECIDED = "undecided"
    ACTIVE = "active"
    INACTIVE = "inactive"


@dataclass
class ReluPair:
    backward: int
    forward: int
    index: int = 0
    phase: Phase = Phase.UNDECIDED
    repair_count: int = 0
    # auxiliary variable holding forward - backward, created when first fixed active
    link: int | None = None

    @property
    def fixed(self) -> bool:
        return self.phase is not Phase.UNDECIDED

    def __repr__(self) -> str:
        return f"ReluPair(b={self.backward}, f={self.forward}, {self.phase.value}, count={self.repair_count})"
