"""Seeded synthetic mobility populations with controllable entropy.

Three archetypes span the predictability range:

* commuters alternate between a home and a work cell on a weekday schedule,
* explorers wander between about ten anchor cells with a sticky Markov chain,
* random users jump to a uniformly random cell every slot.

Every user draws from its own generator seeded by ``(seed, user index)``, so a
population is bit-identical for a given config no matter how it is built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .core import Dataset, GridSpec, PoiTable, TimeSpec, Trajectory
from .entropy import trajectory_entropy

ARCHETYPES = ("commuter", "explorer", "random")
# probability an explorer stays at its current anchor for another slot
EXPLORER_STAY = 0.3


@dataclass(frozen=True)
class SynthConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    time: TimeSpec = field(default_factory=TimeSpec)
    num_users: int = 100
    mix: Tuple[float, float, float] = (0.4, 0.4, 0.2)
    noise_prob: float = 0.05
    sparsity: float = 0.5
    seed: int = 0
    num_categories: int = 85
    num_anchors: int = 10

    def __post_init__(self):
        if self.num_users < 1:
            raise ValueError("num_users must be >= 1")
        if len(self.mix) != 3 or any(f < 0 for f in self.mix) or not math.isclose(sum(self.mix), 1.0, abs_tol=1e-9):
            raise ValueError("mix must be three non-negative fractions summing to 1")
        for name in ("noise_prob", "sparsity"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.num_categories < 1 or self.num_anchors < 2:
            raise ValueError("num_categories must be >= 1 and num_anchors >= 2")


def archetype_counts(cfg: SynthConfig) -> List[int]:
    """Largest-remainder allocation of ``num_users`` over the mix."""
    raw = np.array(cfg.mix) * cfg.num_users
    counts = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - counts), kind="stable")[: cfg.num_users - counts.sum()]:
        counts[i] += 1
    return counts.tolist()


def assign_archetypes(cfg: SynthConfig) -> List[str]:
    labels = [a for a, c in zip(ARCHETYPES, archetype_counts(cfg)) for _ in range(c)]
    order = np.random.default_rng([cfg.seed, 0x5EED]).permutation(len(labels))
    return [labels[i] for i in order]


def _random_cell(rng, grid: GridSpec) -> Tuple[int, int]:
    return int(rng.integers(grid.width)), int(rng.integers(grid.height))


def _commuter_path(rng, cfg: SynthConfig) -> Tuple[np.ndarray, List[Tuple[int, int]]]:
    grid, time = cfg.grid, cfg.time
    home = _random_cell(rng, grid)
    work = home
    while work == home:
        work = _random_cell(rng, grid)
    spd = time.slots_per_day
    start, stop = (spd * 9) // 24, (spd * 18) // 24
    cells = np.empty((time.num_days, spd, 2), dtype=np.int64)
    cells[:] = home
    for d in range(time.num_days):
        if d % 7 < 5:
            cells[d, start:max(stop, start + 1)] = work
    return cells.reshape(-1, 2), [home, work]


def _explorer_path(rng, cfg: SynthConfig) -> Tuple[np.ndarray, List[Tuple[int, int]]]:
    grid, time = cfg.grid, cfg.time
    anchors = []
    while len(anchors) < min(cfg.num_anchors, grid.num_cells):
        c = _random_cell(rng, grid)
        if c not in anchors:
            anchors.append(c)
    k = len(anchors)
    # sticky chain with Zipf-like preference over destinations
    pref = 1.0 / np.arange(1, k + 1)
    pref /= pref.sum()
    stay = EXPLORER_STAY
    n = time.num_days * time.slots_per_day
    idx = np.empty(n, dtype=np.int64)
    cur = 0
    for i in range(n):
        if rng.random() >= stay:
            cur = int(rng.choice(k, p=pref))
        idx[i] = cur
    return np.array(anchors, dtype=np.int64)[idx], anchors


def _random_path(rng, cfg: SynthConfig) -> Tuple[np.ndarray, List[Tuple[int, int]]]:
    n = cfg.time.num_days * cfg.time.slots_per_day
    cells = np.stack([rng.integers(cfg.grid.width, size=n), rng.integers(cfg.grid.height, size=n)], axis=1)
    return cells.astype(np.int64), []


_PATHS = {"commuter": _commuter_path, "explorer": _explorer_path, "random": _random_path}


def generate_user(index: int, archetype: str, cfg: SynthConfig) -> Tuple[Trajectory, List[Tuple[int, int]]]:
    rng = np.random.default_rng([cfg.seed, index])
    cells, anchors = _PATHS[archetype](rng, cfg)
    n = len(cells)
    if archetype != "random" and cfg.noise_prob > 0:
        detour = rng.random(n) < cfg.noise_prob
        m = int(detour.sum())
        cells = cells.copy()
        cells[detour, 0] = rng.integers(cfg.grid.width, size=m)
        cells[detour, 1] = rng.integers(cfg.grid.height, size=m)
    keep = rng.random(n) >= cfg.sparsity
    if not keep.any():
        keep[int(rng.integers(n))] = True
    slots = np.flatnonzero(keep)
    d, t = np.divmod(slots, cfg.time.slots_per_day)
    pts = np.column_stack([d, t, cells[keep]])
    return Trajectory(str(index), pts), anchors


def _poi_for_anchors(index: int, anchors: Sequence[Tuple[int, int]], counts: np.ndarray, cfg: SynthConfig) -> None:
    rng = np.random.default_rng([cfg.seed, index, 1])
    for x, y in anchors:
        cats = rng.choice(cfg.num_categories, size=min(4, cfg.num_categories), replace=False)
        counts[x, y, cats] += rng.poisson(5.0, size=len(cats)) + 1


@dataclass
class SynthResult:
    dataset: Dataset
    archetypes: Dict[str, str]


def synth_generate(cfg: SynthConfig) -> SynthResult:
    """Generate a population and a POI table seeded around the users' anchors."""
    labels = assign_archetypes(cfg)
    counts = np.zeros((cfg.grid.width, cfg.grid.height, cfg.num_categories), dtype=np.int64)
    trajectories, archetypes = {}, {}
    for i, kind in enumerate(labels):
        traj, anchors = generate_user(i, kind, cfg)
        _poi_for_anchors(i, anchors, counts, cfg)
        trajectories[traj.uid] = traj
        archetypes[traj.uid] = kind
    # sparse background so non-anchor cells are not all empty
    bg = np.random.default_rng([cfg.seed, 0xB6])
    mask = bg.random(counts.shape[:2]) < 0.1
    counts[mask, bg.integers(cfg.num_categories, size=int(mask.sum()))] += 1
    return SynthResult(Dataset(cfg.grid, cfg.time, trajectories, PoiTable(counts)), archetypes)


def synth_entropy_sweep(cfg: SynthConfig, noise_levels: Sequence[float],
                        archetype: str = "commuter") -> List[Tuple[float, float]]:
    """Mean per-user normalized entropy of one archetype at each noise level."""
    if list(noise_levels) != sorted(noise_levels):
        raise ValueError("noise_levels must be sorted")
    mix = tuple(1.0 if a == archetype else 0.0 for a in ARCHETYPES)
    rows = []
    for level in noise_levels:
        data = synth_generate(replace(cfg, noise_prob=level, mix=mix)).dataset
        rows.append((level, float(np.mean([trajectory_entropy(t, data.grid) for t in data]))))
    return rows


DESK_GRID = GridSpec(20, 20, 500.0)
DESK_TIME = TimeSpec(slots_per_day=8, num_days=30)


def desk_config(num_users: int = 500, seed: int = 0, **kw) -> SynthConfig:
    """20x20 grid, 8 slots per day, 30 days: small enough for CPU experiments."""
    return SynthConfig(grid=DESK_GRID, time=DESK_TIME, num_users=num_users, seed=seed, **kw)
