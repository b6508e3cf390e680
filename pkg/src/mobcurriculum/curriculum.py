"""Entropy-ordered, horizon-staged training schedules."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np

from .augment import VARIANT_NAMES, is_real, split_uid
from .core import Dataset, uid_sort_key
from .entropy import trajectory_entropy

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StageSpec:
    entropy_upper: float
    horizon_days: int
    epochs: int = 20


DEFAULT_STAGES = (
    StageSpec(0.4, 3, 20),
    StageSpec(0.65, 7, 20),
    StageSpec(math.inf, 15, 20),
)


def check_stages(stages: Sequence[StageSpec]) -> None:
    if not stages:
        raise ValueError("at least one stage is required")
    for a, b in zip(stages, stages[1:]):
        if not b.entropy_upper > a.entropy_upper:
            raise ValueError("stage entropy thresholds must be strictly increasing")
        if b.horizon_days < a.horizon_days:
            raise ValueError("stage horizons must be non-decreasing")
    for s in stages:
        if s.horizon_days < 1 or s.epochs < 0:
            raise ValueError(f"invalid stage {s}")


def stage_of(h_norm: float, stages: Sequence[StageSpec] = DEFAULT_STAGES) -> int:
    """1-based index of the first stage whose exclusive upper bound exceeds ``h_norm``.

    The last stage admits everything regardless of its threshold.
    """
    for i, s in enumerate(stages[:-1], start=1):
        if h_norm < s.entropy_upper:
            return i
    return len(stages)


@dataclass(frozen=True)
class ScheduleEntry:
    uid: str
    entropy: float
    stage: int
    horizon_days: int

    @property
    def base_uid(self) -> str:
        return split_uid(self.uid)[0]

    @property
    def variant(self) -> str:
        return VARIANT_NAMES[split_uid(self.uid)[1]]


@dataclass(frozen=True)
class CurriculumSchedule:
    entries: tuple
    stages: tuple

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def stage_entries(self, stage: int) -> List[ScheduleEntry]:
        return [e for e in self.entries if e.stage == stage]

    @property
    def stage_numbers(self) -> List[int]:
        return sorted({e.stage for e in self.entries})

    def to_csv(self) -> str:
        lines = ["order,uid,variant,stage,horizon_days,h_norm"]
        for i, e in enumerate(self.entries):
            lines.append(f"{i},{e.base_uid},{e.variant},{e.stage},{e.horizon_days},{e.entropy!r}")
        return "\n".join(lines) + "\n"


def _order_key(uid: str, h: float):
    return (h, uid_sort_key(uid))


def build_curriculum(dataset: Dataset, stages: Sequence[StageSpec] = DEFAULT_STAGES,
                     cumulative: bool = True, expand_horizons: bool = False,
                     entropies: Optional[Dict[str, float]] = None) -> CurriculumSchedule:
    """Assign trajectories to stages and sort each stage by ascending entropy.

    With ``cumulative`` (default) stage ``s`` re-admits everything from earlier
    stages, so the final stage holds the whole dataset once. Otherwise stages
    are disjoint entropy bands. ``expand_horizons`` emits one entry per horizon
    ``1..horizon_days`` for each admitted trajectory instead of a single entry.
    """
    stages = tuple(stages)
    check_stages(stages)
    if entropies is None:
        entropies = {traj.uid: trajectory_entropy(traj, dataset.grid) for traj in dataset}
    ranked = sorted(((u, entropies[u]) for u in dataset.uids), key=lambda p: _order_key(*p))
    own_stage = {u: stage_of(h, stages) for u, h in ranked}

    entries = []
    for idx, spec in enumerate(stages, start=1):
        if cumulative:
            admitted = [(u, h) for u, h in ranked if own_stage[u] <= idx]
        else:
            admitted = [(u, h) for u, h in ranked if own_stage[u] == idx]
        if not admitted:
            logger.warning("curriculum stage %d admits no trajectories; skipped", idx)
            continue
        horizons = range(1, spec.horizon_days + 1) if expand_horizons else (spec.horizon_days,)
        for u, h in admitted:
            for hz in horizons:
                entries.append(ScheduleEntry(u, h, idx, hz))
    return CurriculumSchedule(tuple(entries), stages)


@dataclass(frozen=True)
class Batch:
    stage: int
    entries: tuple


def schedule_iter(schedule: CurriculumSchedule, batch_size: int, shuffle: bool = False,
                  seed: int = 0, stage: Optional[int] = None, epoch: int = 0) -> Iterator[Batch]:
    """Chunk the schedule into batches, stage by stage, never crossing a stage boundary.

    ``shuffle`` permutes entries within each stage with a generator seeded by
    ``(seed, stage, epoch)``; stage order is always preserved.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    stages = [stage] if stage is not None else schedule.stage_numbers
    for s in stages:
        items = schedule.stage_entries(s)
        if shuffle:
            rng = np.random.default_rng([seed, s, epoch])
            items = [items[i] for i in rng.permutation(len(items))]
        for i in range(0, len(items), batch_size):
            yield Batch(s, tuple(items[i:i + batch_size]))


def finetune_selector(dataset: Dataset) -> Dataset:
    """Keep only real (identity-variant) trajectories."""
    return dataset.subset([u for u in dataset.uids if is_real(u)])


def finetune_schedule(dataset: Dataset, stages: Sequence[StageSpec] = DEFAULT_STAGES,
                      epochs: Optional[int] = None) -> CurriculumSchedule:
    """Single-stage schedule over real trajectories at the final-stage horizon."""
    real = finetune_selector(dataset)
    final = stages[-1]
    spec = StageSpec(math.inf, final.horizon_days, final.epochs if epochs is None else epochs)
    entries = tuple(ScheduleEntry(u, math.nan, 1, final.horizon_days) for u in real.uids)
    return CurriculumSchedule(entries, (spec,))


def flat_schedule(dataset: Dataset, horizon_days: int, epochs: int) -> CurriculumSchedule:
    """One stage, all trajectories, no entropy ordering (the shuffled baseline)."""
    spec = StageSpec(math.inf, horizon_days, epochs)
    entries = tuple(ScheduleEntry(u, math.nan, 1, horizon_days) for u in dataset.uids)
    return CurriculumSchedule(entries, (spec,))
