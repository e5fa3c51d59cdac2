"""Case-split stack, bound log, and conflict-driven backjumping.

Every bound change made after the problem is set up is recorded in a
:class:`BoundLog` together with the split depth at which it was introduced.
A contradiction ``l(x) > u(x)`` is blamed on the deepest split that introduced
one of the bounds it rests on; all deeper splits are undone at once.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import IO, TYPE_CHECKING, Iterable

from reluplex.relu import Phase, ReluPair

if TYPE_CHECKING:
    from reluplex.engine import Reluplex


class BoundKind(enum.Enum):
    LOWER = "lower"
    UPPER = "upper"


LOWER = BoundKind.LOWER
UPPER = BoundKind.UPPER


@dataclass(frozen=True)
class DerivedBound:
    var: int
    kind: BoundKind
    value: float
    source_row: int | None
    depth: int


@dataclass(frozen=True)
class Conflict:
    var: int
    lower: float
    upper: float
    depth_of_cause: int = 0
    # bounds the contradiction rests on; defaults to the two bounds of ``var``
    sources: tuple[tuple[int, BoundKind], ...] = ()

    def __post_init__(self):
        if not self.lower > self.upper:
            raise ValueError(f"not a conflict: lower {self.lower} <= upper {self.upper}")


class BoundConflict(Exception):
    def __init__(self, conflict: Conflict):
        super().__init__(f"l(x{conflict.var}) = {conflict.lower:.6g} > u(x{conflict.var}) = {conflict.upper:.6g}")
        self.conflict = conflict


class BoundLog:
    """Append-only record of bound changes, truncated when splits are undone."""

    def __init__(self, num_vars: int = 0):
        self.entries: list[DerivedBound] = []
        self._previous: list[int] = []
        self.lower_depth: list[int] = [0] * num_vars
        self.upper_depth: list[int] = [0] * num_vars

    def __len__(self) -> int:
        return len(self.entries)

    def ensure_size(self, num_vars: int) -> None:
        missing = num_vars - len(self.lower_depth)
        if missing > 0:
            self.lower_depth.extend([0] * missing)
            self.upper_depth.extend([0] * missing)

    def record(self, entry: DerivedBound) -> None:
        depths = self.lower_depth if entry.kind is LOWER else self.upper_depth
        self._previous.append(depths[entry.var])
        depths[entry.var] = entry.depth
        self.entries.append(entry)

    def depth_of(self, var: int, kind: BoundKind) -> int:
        if var >= len(self.lower_depth):
            return 0
        return (self.lower_depth if kind is LOWER else self.upper_depth)[var]

    def truncate(self, mark: int) -> None:
        while len(self.entries) > mark:
            entry = self.entries.pop()
            depths = self.lower_depth if entry.kind is LOWER else self.upper_depth
            depths[entry.var] = self._previous.pop()


def cause_depth(conflict: Conflict, log: BoundLog | Iterable[DerivedBound]) -> int:
    """Deepest introduction depth among the bounds a conflict rests on (0 for problem bounds)."""
    sources = conflict.sources or ((conflict.var, LOWER), (conflict.var, UPPER))
    if isinstance(log, BoundLog):
        return max(log.depth_of(v, k) for v, k in sources)
    latest: dict[tuple[int, BoundKind], int] = {}
    for entry in log:
        latest[(entry.var, entry.kind)] = entry.depth
    return max(latest.get(source, 0) for source in sources)


class Case(enum.Enum):
    ACTIVE = "active"
    INACTIVE = "inactive"

    @property
    def other(self) -> "Case":
        return Case.INACTIVE if self is Case.ACTIVE else Case.ACTIVE

    @property
    def phase(self) -> Phase:
        return Phase.ACTIVE if self is Case.ACTIVE else Phase.INACTIVE


@dataclass(frozen=True)
class BoundChange:
    var: int
    kind: BoundKind
    value: float


@dataclass
class Snapshot:
    lower: list[float]
    upper: list[float]
    phases: list[Phase]
    repair_counts: list[int]
    log_mark: int


@dataclass
class SplitFrame:
    pair: ReluPair
    taken: Case
    snapshot: Snapshot
    explored_other: bool = False

    @property
    def current(self) -> Case:
        return self.taken.other if self.explored_other else self.taken


@dataclass(frozen=True)
class Backjumped:
    new_depth: int


@dataclass(frozen=True)
class RootUnsat:
    pass


@dataclass
class SplitStack:
    solver: Reluplex
    frames: list[SplitFrame] = field(default_factory=list)
    pushes: int = 0
    flips: int = 0
    max_depth: int = 0
    tracing: bool = False
    trace: list[dict] = field(default_factory=list)
    sink: IO[str] | None = None

    @property
    def depth(self) -> int:
        return len(self.frames)

    @property
    def total_splits(self) -> int:
        return self.pushes + self.flips

    def _emit(self, record: dict) -> None:
        if not self.tracing:
            return
        self.trace.append(record)
        if self.sink is not None:
            self.sink.write(json.dumps(record) + "\n")

    def push_split(self, pair: ReluPair, first_case: Case) -> None:
        if pair.fixed:
            raise ValueError(f"{pair} already has a fixed phase")
        frame = SplitFrame(pair, first_case, self.solver.snapshot())
        self.frames.append(frame)
        self.pushes += 1
        self.max_depth = max(self.max_depth, self.depth)
        self._emit({"event": "push", "depth": self.depth, "pair": pair.index, "case": first_case.value})
        self.solver.apply_case(pair, first_case)

    def pop(self) -> SplitFrame:
        """Undo the top split entirely, restoring the state captured before it."""
        frame = self.frames.pop()
        self.solver.restore(frame.snapshot)
        self._emit({"event": "pop", "depth": self.depth + 1, "pair": frame.pair.index,
                    "explored_other": frame.explored_other, "reason": "pop"})
        return frame

    def handle_conflict(self, conflict: Conflict) -> Backjumped | RootUnsat:
        target = min(conflict.depth_of_cause, self.depth)
        self._emit({"event": "conflict", "depth": self.depth, "var": conflict.var,
                    "lower": _jsonable(conflict.lower), "upper": _jsonable(conflict.upper),
                    "cause_depth": conflict.depth_of_cause})
        while self.depth > target:
            frame = self.frames.pop()
            self._emit({"event": "pop", "depth": self.depth + 1, "pair": frame.pair.index,
                        "explored_other": frame.explored_other, "reason": "backjump"})
        while self.frames:
            frame = self.frames[-1]
            if not frame.explored_other:
                self.solver.restore(frame.snapshot)
                frame.explored_other = True
                self.flips += 1
                self._emit({"event": "flip", "depth": self.depth, "pair": frame.pair.index,
                            "case": frame.current.value})
                self.solver.apply_case(frame.pair, frame.current)
                return Backjumped(self.depth)
            self.frames.pop()
            self._emit({"event": "pop", "depth": self.depth + 1, "pair": frame.pair.index,
                        "explored_other": True, "reason": "exhausted"})
        return RootUnsat()


def _jsonable(x: float):
    return x if math.isfinite(x) else str(x)
