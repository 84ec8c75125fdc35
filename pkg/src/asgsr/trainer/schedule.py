"""Progressive stage schedule: growing maximum scale factor per stage."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ProgressiveSchedule:
    """Ordered (max scale, iterations) stages. During stage t the per-iteration
    render scale is drawn uniformly from the pool of all stage maxima up to t."""

    stages: tuple[tuple[float, int], ...] = ((2.0, 2000), (4.0, 2000), (8.0, 2000))

    def __post_init__(self):
        if not self.stages:
            raise ValueError("schedule needs at least one stage")
        stages = tuple((float(s), int(n)) for s, n in self.stages)
        prev = 0.0
        for s, n in stages:
            if s < 1.0:
                raise ValueError(f"stage scale must be >= 1, got {s}")
            if s <= prev:
                raise ValueError(f"stage scales must be strictly increasing, got {[x for x, _ in stages]}")
            if n < 0:
                raise ValueError(f"stage iterations must be >= 0, got {n}")
            prev = s
        object.__setattr__(self, "stages", stages)

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    @property
    def total_iterations(self) -> int:
        return sum(n for _, n in self.stages)

    def pool(self, stage_index: int) -> tuple[float, ...]:
        """Scales eligible for sampling during the given stage (0-based)."""
        if not 0 <= stage_index < len(self.stages):
            raise IndexError(f"stage index {stage_index} out of range")
        return tuple(s for s, _ in self.stages[: stage_index + 1])

    def lower_scale(self, stage_index: int, scale: float) -> float | None:
        """Next-lower pool entry for a sampled scale; None when it is the
        lowest (the structure target is then the stored reference)."""
        pool = self.pool(stage_index)
        if scale not in pool:
            raise ValueError(f"scale {scale} not in stage {stage_index} pool {pool}")
        pos = pool.index(scale)
        return None if pos == 0 else pool[pos - 1]
