"""Token features, auxiliary distance/direction labels and model samples."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .augment import apply_to_cells, variant_of
from .core import GridSpec, PoiTable, TimeSpec, Trajectory, TrajectoryPoint

IGNORE = -100

DISTANCE_CLASSES = ("stationary", "short", "medium", "long")
# Distance bucket lower edges in meters (left-closed).
DISTANCE_EDGES_M = (500.0, 1000.0, 3500.0)

# Compass sectors counterclockwise from East, then stationary.
DIRECTIONS = ("E", "NE", "N", "NW", "W", "SW", "S", "SE", "STAY")
STATIONARY = 8

# Column layout of ModelSample.ids.
ID_COLUMNS = ("loc", "d", "t", "day_of_week", "timedelta", "day_night")


@dataclass(frozen=True)
class FeatureConfig:
    top_k: int = 3
    day_slots: Optional[Tuple[int, int]] = None
    timedelta_cap: int = 48
    week_anchor: int = 0
    max_observed: Optional[int] = None

    def __post_init__(self):
        if not 1 <= self.top_k <= 85:
            raise ValueError(f"top_k must be in [1, 85], got {self.top_k}")
        if self.timedelta_cap < 1:
            raise ValueError("timedelta_cap must be >= 1")

    def day_range(self, time: TimeSpec) -> Tuple[int, int]:
        """Inclusive slot range counted as day; defaults to 06:00-22:00."""
        if self.day_slots is not None:
            lo, hi = self.day_slots
        else:
            lo, hi = time.slots_per_day // 4, time.slots_per_day * 11 // 12 - 1
        if not 0 <= lo <= hi < time.slots_per_day:
            raise ValueError(f"day slot range {(lo, hi)} outside [0, {time.slots_per_day})")
        return lo, hi


@dataclass(frozen=True)
class TokenFeatures:
    """Struct-of-arrays token features, one row per point."""

    d: np.ndarray
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    day_of_week: np.ndarray
    timedelta: np.ndarray
    day_night: np.ndarray
    top_k_poi: np.ndarray  # (n, k)

    def __len__(self) -> int:
        return len(self.d)


def poi_null_id(num_categories: int) -> int:
    return num_categories


def poi_mask_id(num_categories: int) -> int:
    return num_categories + 1


def top_k_table(poi: PoiTable, k: int) -> np.ndarray:
    """``(width, height, k)`` ids of each cell's most frequent categories.

    Ties go to the lower category id; cells with fewer than ``k`` non-zero
    categories are padded with the null id.
    """
    cache = poi.__dict__.setdefault("_top_k_cache", {})
    if k not in cache:
        counts = poi.counts
        order = np.argsort(-counts, axis=2, kind="stable")[:, :, :k]
        top_counts = np.take_along_axis(counts, order, axis=2)
        order = np.where(top_counts > 0, order, poi_null_id(poi.num_categories))
        if order.shape[2] < k:
            pad = np.full(order.shape[:2] + (k - order.shape[2],), poi_null_id(poi.num_categories))
            order = np.concatenate([order, pad], axis=2)
        cache[k] = order
    return cache[k]


def _temporal(d: np.ndarray, t: np.ndarray, cfg: FeatureConfig, time: TimeSpec):
    dow = (d + cfg.week_anchor) % 7
    slots = d * time.slots_per_day + t
    td = np.zeros_like(slots)
    td[1:] = np.minimum(np.diff(slots), cfg.timedelta_cap)
    lo, hi = cfg.day_range(time)
    dn = ((t >= lo) & (t <= hi)).astype(np.int64)
    return dow, td, dn


def _poi_lookup(x, y, uid: str, poi: Optional[PoiTable], cfg: FeatureConfig, grid: GridSpec,
                num_categories: int) -> np.ndarray:
    if poi is None:
        return np.full((len(x), cfg.top_k), poi_null_id(num_categories), dtype=np.int64)
    # a variant sees the POI table reflected with it: look up the source cell
    sx, sy = apply_to_cells(x, y, variant_of(uid), grid)
    return top_k_table(poi, cfg.top_k)[sx, sy]


def derive_token_features(traj: Trajectory, poi: Optional[PoiTable], cfg: FeatureConfig,
                          grid: GridSpec, time: TimeSpec) -> TokenFeatures:
    d, t, x, y = (traj.points[:, i] for i in range(4))
    dow, td, dn = _temporal(d, t, cfg, time)
    ncat = poi.num_categories if poi is not None else 85
    top = _poi_lookup(x, y, traj.uid, poi, cfg, grid, ncat)
    return TokenFeatures(d, t, x, y, dow, td, dn, top)


def distance_classes(dx, dy, cell_size_m: float) -> np.ndarray:
    """Vectorized distance buckets; compares squared meters to stay exact on integer deltas."""
    d2 = (np.asarray(dx, dtype=np.float64) ** 2 + np.asarray(dy, dtype=np.float64) ** 2) * cell_size_m ** 2
    out = np.zeros(np.shape(d2), dtype=np.int64)
    for edge in DISTANCE_EDGES_M:
        out += d2 >= edge * edge
    return out


def direction_classes(dx, dy) -> np.ndarray:
    """Vectorized compass sectors (+x East, +y North), 8 for no movement.

    Each 45-degree sector is centered on its compass direction and owns its
    counterclockwise edge.
    """
    dx = np.asarray(dx, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    angle = np.degrees(np.arctan2(dy, dx))
    sector = np.floor((angle + 22.5) / 45.0).astype(np.int64) % 8
    return np.where((dx == 0) & (dy == 0), STATIONARY, sector)


def distance_class(p: TrajectoryPoint, q: TrajectoryPoint, grid: GridSpec) -> int:
    return int(distance_classes(q.x - p.x, q.y - p.y, grid.cell_size_m))


def direction_class(p: TrajectoryPoint, q: TrajectoryPoint) -> int:
    return int(direction_classes(q.x - p.x, q.y - p.y))


def distance_meters(p: TrajectoryPoint, q: TrajectoryPoint, grid: GridSpec) -> float:
    return grid.cell_size_m * math.hypot(q.x - p.x, q.y - p.y)


@dataclass(frozen=True)
class ModelSample:
    """Encoder input for one trajectory window.

    ``ids`` columns follow :data:`ID_COLUMNS`; ``poi`` holds the top-k POI ids.
    Target positions carry the MASK location/POI ids and real temporal ids,
    and are the only positions with labels (``IGNORE`` elsewhere).
    """

    uid: str
    ids: np.ndarray
    poi: np.ndarray
    target: np.ndarray
    loc_label: np.ndarray
    dist_label: np.ndarray
    dir_label: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def num_targets(self) -> int:
        return int(self.target.sum())

    @property
    def target_days(self) -> np.ndarray:
        return self.ids[self.target, 1]

    @property
    def target_slots(self) -> np.ndarray:
        return self.ids[self.target, 2]


class SampleError(ValueError):
    pass


def assemble_sample(uid: str, observed: np.ndarray, target_times: np.ndarray,
                    target_cells: Optional[np.ndarray], poi: Optional[PoiTable], cfg: FeatureConfig,
                    grid: GridSpec, time: TimeSpec) -> ModelSample:
    """Build a sample from observed ``(d, t, x, y)`` rows and ``(d, t)`` target rows.

    ``target_cells`` holds ground-truth ``(x, y)`` for the targets; without it
    the sample is a pure query and carries no labels.
    """
    if len(observed) == 0:
        raise SampleError(f"user {uid!r}: empty observation window")
    if len(target_times) == 0:
        raise SampleError(f"user {uid!r}: empty target window")
    if cfg.max_observed is not None:
        observed = observed[-cfg.max_observed:]
    n_obs, n_tgt = len(observed), len(target_times)
    d = np.concatenate([observed[:, 0], target_times[:, 0]])
    t = np.concatenate([observed[:, 1], target_times[:, 1]])
    slots = d * time.slots_per_day + t
    if (np.diff(slots) <= 0).any():
        raise SampleError(f"user {uid!r}: targets must follow observations in strictly increasing time")
    dow, td, dn = _temporal(d, t, cfg, time)

    ncat = poi.num_categories if poi is not None else 85
    mask_loc = grid.num_cells
    loc = np.full(n_obs + n_tgt, mask_loc, dtype=np.int64)
    loc[:n_obs] = observed[:, 2] * grid.height + observed[:, 3]
    poi_ids = np.full((n_obs + n_tgt, cfg.top_k), poi_mask_id(ncat), dtype=np.int64)
    poi_ids[:n_obs] = _poi_lookup(observed[:, 2], observed[:, 3], uid, poi, cfg, grid, ncat)

    ids = np.stack([loc, d, t, dow, td, dn], axis=1).astype(np.int64)
    target = np.zeros(n_obs + n_tgt, dtype=bool)
    target[n_obs:] = True
    loc_label = np.full(n_obs + n_tgt, IGNORE, dtype=np.int64)
    dist_label = loc_label.copy()
    dir_label = loc_label.copy()
    if target_cells is not None:
        tx, ty = target_cells[:, 0], target_cells[:, 1]
        loc_label[n_obs:] = tx * grid.height + ty
        # teacher forcing: each target is referenced to its ground-truth predecessor
        px = np.concatenate([[observed[-1, 2]], tx[:-1]])
        py = np.concatenate([[observed[-1, 3]], ty[:-1]])
        dist_label[n_obs:] = distance_classes(tx - px, ty - py, grid.cell_size_m)
        dir_label[n_obs:] = direction_classes(tx - px, ty - py)
    return ModelSample(uid, ids, poi_ids, target, loc_label, dist_label, dir_label)


def build_model_sample(traj: Trajectory, poi: Optional[PoiTable], cfg: FeatureConfig,
                       observe_days: int, horizon_days: int, grid: GridSpec, time: TimeSpec) -> ModelSample:
    """Observe days ``[0, observe_days)`` and predict ``[observe_days, observe_days + horizon_days)``."""
    if horizon_days < 1:
        raise SampleError("horizon_days must be >= 1")
    observed = traj.window(0, observe_days)
    targets = traj.window(observe_days, observe_days + horizon_days)
    return assemble_sample(traj.uid, observed, targets[:, :2], targets[:, 2:], poi, cfg, grid, time)


def build_query(traj: Trajectory, poi: Optional[PoiTable], cfg: FeatureConfig, observe_days: int,
                target_times: np.ndarray, grid: GridSpec, time: TimeSpec) -> ModelSample:
    """Unlabeled sample asking for locations at ``target_times`` after the observed prefix."""
    observed = traj.window(0, observe_days)
    return assemble_sample(traj.uid, observed, np.asarray(target_times, dtype=np.int64).reshape(-1, 2),
                           None, poi, cfg, grid, time)


def all_slots(start_day: int, days: int, time: TimeSpec) -> np.ndarray:
    d = np.repeat(np.arange(start_day, start_day + days), time.slots_per_day)
    t = np.tile(np.arange(time.slots_per_day), days)
    return np.stack([d, t], axis=1)


def sample_to_csv(sample: ModelSample) -> str:
    """Debug dump, one row per token."""
    k = sample.poi.shape[1]
    header = list(ID_COLUMNS) + [f"poi{i}" for i in range(k)] + ["target", "loc_label", "dist_label", "dir_label"]
    rows = [",".join(header)]
    for i in range(len(sample)):
        vals = sample.ids[i].tolist() + sample.poi[i].tolist() + [
            int(sample.target[i]), int(sample.loc_label[i]), int(sample.dist_label[i]), int(sample.dir_label[i])]
        rows.append(",".join(str(v) for v in vals))
    return "\n".join(rows) + "\n"
