from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from reluplex import numerics


@dataclass
class SolverConfig:
    """Tunables for one solver run (split threshold 5, roundoff check every
    5000 pivots with a 1e-6 restoration threshold by default)."""

    timeout_seconds: float | None = None
    max_pivots: int | None = None
    split_threshold: int = 5
    tighten_cadence: int = 5000
    fixpoint_sweeps: int = 3
    tighten_after_pivot: bool = True
    tighten_on_split: bool = True
    bidirectional_tightening: bool = True
    roundoff_threshold: float = numerics.ROUNDOFF_THRESHOLD
    roundoff_cadence: int = numerics.ROUNDOFF_CADENCE
    min_pivot_element: float = numerics.MIN_PIVOT_ELEMENT
    under_approx_epsilon: float = 0.0
    backjumping: bool = True
    bland_after: int = 10_000
    always_bland: bool = False
    trace: bool = False
    seed: int = 0

    def __post_init__(self):
        positive = ("split_threshold", "tighten_cadence", "fixpoint_sweeps", "roundoff_threshold",
                    "roundoff_cadence", "min_pivot_element", "bland_after")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.timeout_seconds is not None and self.timeout_seconds < 0:
            raise ValueError("timeout_seconds must be non-negative")
        if self.max_pivots is not None and self.max_pivots < 0:
            raise ValueError("max_pivots must be non-negative")
        if self.under_approx_epsilon < 0:
            raise ValueError("under_approx_epsilon must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SolverConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**data)


# the CLI's name for the same settings
RunConfig = SolverConfig
