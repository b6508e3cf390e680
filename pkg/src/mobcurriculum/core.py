"""Data model, CSV ingestion, validation and the user-level split.

Coordinates are 0-indexed: ``x`` in ``[0, width)`` and ``y`` in ``[0, height)``.
Days and slots are 0-indexed as well.
"""

from __future__ import annotations

import csv
import io
import logging
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, NamedTuple, Optional, TextIO, Tuple

import numpy as np

logger = logging.getLogger(__name__)

TRAJECTORY_HEADER = ("uid", "d", "t", "x", "y")
POI_HEADER = ("x", "y", "cat", "count")


class DataError(ValueError):
    """Raised for malformed, out-of-bounds or inconsistent input data."""


@dataclass(frozen=True)
class GridSpec:
    width: int = 200
    height: int = 200
    cell_size_m: float = 500.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        if not self.cell_size_m > 0:
            raise ValueError(f"cell_size_m must be positive, got {self.cell_size_m}")

    @property
    def x_max(self) -> int:
        return self.width - 1

    @property
    def y_max(self) -> int:
        return self.height - 1

    @property
    def num_cells(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class TimeSpec:
    slots_per_day: int = 48
    num_days: int = 75

    def __post_init__(self):
        if self.slots_per_day < 1 or self.num_days < 1:
            raise ValueError("slots_per_day and num_days must be >= 1")


class TrajectoryPoint(NamedTuple):
    d: int
    t: int
    x: int
    y: int


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One user's points as an ``(n, 4)`` integer array of ``(d, t, x, y)`` rows.

    Rows are strictly increasing in ``(d, t)``. The array is made read-only on
    construction so trajectories can be shared freely.
    """

    uid: str
    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.int64).reshape(-1, 4)
        if len(pts) == 0:
            raise DataError(f"trajectory {self.uid!r} is empty")
        if len(pts) > 1:
            d, t = pts[:, 0], pts[:, 1]
            ok = (d[1:] > d[:-1]) | ((d[1:] == d[:-1]) & (t[1:] > t[:-1]))
            if not ok.all():
                raise DataError(f"trajectory {self.uid!r} is not strictly increasing in (d, t)")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self) -> Iterator[TrajectoryPoint]:
        for row in self.points.tolist():
            yield TrajectoryPoint(*row)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return self.uid == other.uid and np.array_equal(self.points, other.points)

    @property
    def d(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def t(self) -> np.ndarray:
        return self.points[:, 1]

    @property
    def x(self) -> np.ndarray:
        return self.points[:, 2]

    @property
    def y(self) -> np.ndarray:
        return self.points[:, 3]

    def absolute_slots(self, slots_per_day: int) -> np.ndarray:
        return self.points[:, 0] * slots_per_day + self.points[:, 1]

    def window(self, day_start: int, day_stop: int) -> np.ndarray:
        """Rows with ``day_start <= d < day_stop``."""
        d = self.points[:, 0]
        return self.points[(d >= day_start) & (d < day_stop)]


@dataclass(eq=False)
class PoiTable:
    """Dense per-cell POI category counts, shape ``(width, height, categories)``.

    Cells never listed in the source file stay all-zero.
    """

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 3:
            raise ValueError("POI counts must be a (width, height, categories) array")
        if (self.counts < 0).any():
            raise DataError("POI counts must be non-negative")

    @classmethod
    def empty(cls, grid: GridSpec, categories: int = 85) -> "PoiTable":
        return cls(np.zeros((grid.width, grid.height, categories), dtype=np.int64))

    @property
    def num_categories(self) -> int:
        return self.counts.shape[2]

    def __eq__(self, other):
        if not isinstance(other, PoiTable):
            return NotImplemented
        return np.array_equal(self.counts, other.counts)


@dataclass(eq=False)
class Dataset:
    grid: GridSpec
    time: TimeSpec
    trajectories: Dict[str, Trajectory]
    poi: Optional[PoiTable] = None

    def __post_init__(self):
        for uid, traj in self.trajectories.items():
            if uid != traj.uid:
                raise DataError(f"key {uid!r} does not match trajectory uid {traj.uid!r}")
            _check_bounds(traj.points, self.grid, self.time, uid)
        # canonical ordering makes every downstream iteration deterministic
        self.trajectories = {u: self.trajectories[u] for u in sorted(self.trajectories, key=uid_sort_key)}

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self) -> Iterator[Trajectory]:
        return iter(self.trajectories.values())

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.time == other.time
            and list(self.trajectories) == list(other.trajectories)
            and all(self.trajectories[u] == other.trajectories[u] for u in self.trajectories)
            and self.poi == other.poi
        )

    @property
    def uids(self) -> List[str]:
        return list(self.trajectories)

    def subset(self, uids: Iterable[str]) -> "Dataset":
        return Dataset(self.grid, self.time, {u: self.trajectories[u] for u in uids}, self.poi)


_UID_RE = re.compile(r"^(\d+)(.*)$")


def uid_sort_key(uid: str):
    """Natural ordering: numeric uids compare as integers, variant tags after."""
    m = _UID_RE.match(uid)
    if m:
        return (0, int(m.group(1)), m.group(2))
    return (1, 0, uid)


def _check_bounds(points: np.ndarray, grid: GridSpec, time: TimeSpec, uid: str) -> None:
    d, t, x, y = points.T
    for name, arr, hi in (("d", d, time.num_days), ("t", t, time.slots_per_day),
                          ("x", x, grid.width), ("y", y, grid.height)):
        bad = (arr < 0) | (arr >= hi)
        if bad.any():
            raise DataError(f"user {uid!r}: {name}={int(arr[bad][0])} out of bounds [0, {hi - 1}]")


def ingest_trajectories(stream: TextIO, grid: GridSpec = GridSpec(), time: TimeSpec = TimeSpec(),
                        poi: Optional[PoiTable] = None) -> Dataset:
    """Read a ``uid,d,t,x,y`` CSV stream into a :class:`Dataset`.

    Rows may arrive in any order; each user's points are sorted by ``(d, t)``.
    Errors carry the 1-based line number of the offending row.
    """
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("line 1: empty input, expected header uid,d,t,x,y") from None
    if tuple(h.strip() for h in header) != TRAJECTORY_HEADER:
        raise DataError(f"line 1: expected header uid,d,t,x,y, got {','.join(header)}")

    rows: Dict[str, List[Tuple[int, int, int, int]]] = {}
    seen: Dict[Tuple[str, int, int], int] = {}
    bounds = (time.num_days, time.slots_per_day, grid.width, grid.height)
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 5:
            raise DataError(f"line {lineno}: expected 5 fields, got {len(row)}")
        uid = row[0].strip()
        if not uid:
            raise DataError(f"line {lineno}: empty uid")
        try:
            vals = tuple(int(v) for v in row[1:])
        except ValueError:
            raise DataError(f"line {lineno}: non-integer field in {row!r}") from None
        for name, v, hi in zip("dtxy", vals, bounds):
            if not 0 <= v < hi:
                raise DataError(f"line {lineno}: {name}={v} out of bounds [0, {hi - 1}]")
        key = (uid, vals[0], vals[1])
        if key in seen:
            raise DataError(f"line {lineno}: duplicate timestamp d={vals[0]} t={vals[1]} "
                            f"for user {uid!r} (first at line {seen[key]})")
        seen[key] = lineno
        rows.setdefault(uid, []).append(vals)

    trajectories = {}
    for uid, pts in rows.items():
        arr = np.array(pts, dtype=np.int64)
        order = np.lexsort((arr[:, 1], arr[:, 0]))
        trajectories[uid] = Trajectory(uid, arr[order])
    return Dataset(grid, time, trajectories, poi)


def read_trajectories(path, grid: GridSpec = GridSpec(), time: TimeSpec = TimeSpec(),
                      poi: Optional[PoiTable] = None) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        return ingest_trajectories(fh, grid, time, poi)


def write_trajectories(dataset: Dataset, stream: TextIO) -> None:
    stream.write(",".join(TRAJECTORY_HEADER) + "\n")
    for traj in dataset:
        for d, t, x, y in traj.points.tolist():
            stream.write(f"{traj.uid},{d},{t},{x},{y}\n")


def trajectories_to_csv(dataset: Dataset) -> str:
    buf = io.StringIO()
    write_trajectories(dataset, buf)
    return buf.getvalue()


def ingest_poi(stream: TextIO, grid: GridSpec = GridSpec(), categories: int = 85) -> PoiTable:
    """Read an ``x,y,cat,count`` CSV. Repeated ``(x, y, cat)`` rows are summed."""
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != POI_HEADER:
        raise DataError("line 1: expected header x,y,cat,count")
    table = PoiTable.empty(grid, categories)
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise DataError(f"line {lineno}: expected 4 fields, got {len(row)}")
        try:
            x, y, cat, count = (int(v) for v in row)
        except ValueError:
            raise DataError(f"line {lineno}: non-integer field in {row!r}") from None
        if not (0 <= x < grid.width and 0 <= y < grid.height):
            raise DataError(f"line {lineno}: cell ({x},{y}) out of bounds")
        if not 0 <= cat < categories:
            raise DataError(f"line {lineno}: category {cat} out of range [0, {categories - 1}]")
        if count < 0:
            raise DataError(f"line {lineno}: negative count {count}")
        table.counts[x, y, cat] += count
    return table


def read_poi(path, grid: GridSpec = GridSpec(), categories: int = 85) -> PoiTable:
    with open(path, newline="", encoding="utf-8") as fh:
        return ingest_poi(fh, grid, categories)


def write_poi(poi: PoiTable, stream: TextIO) -> None:
    stream.write(",".join(POI_HEADER) + "\n")
    for x, y, cat in zip(*np.nonzero(poi.counts)):
        stream.write(f"{x},{y},{cat},{poi.counts[x, y, cat]}\n")


def split_by_user(dataset: Dataset, ratios=(7, 1, 2), seed: int = 0) -> Tuple[Dataset, Dataset, Dataset]:
    """Partition users into train/val/test.

    Uids are shuffled with a seeded generator and cut at floor-allocated sizes;
    the remainder goes to train. A partition with a positive ratio always gets
    at least one user.
    """
    ratios = np.asarray(ratios, dtype=float)
    if ratios.shape != (3,) or (ratios < 0).any() or ratios.sum() <= 0:
        raise ValueError(f"ratios must be three non-negative numbers with positive sum, got {ratios}")
    if len(dataset) == 0:
        raise DataError("cannot split an empty dataset")
    ratios = ratios / ratios.sum()
    n = len(dataset)
    sizes = np.floor(ratios * n).astype(int)
    needed = ratios > 0
    if needed.sum() > n:
        raise DataError(f"{n} users cannot fill {int(needed.sum())} non-empty partitions")
    # bump non-empty partitions that rounded down to zero, taking from the largest
    for i in np.flatnonzero(needed & (sizes == 0)):
        sizes[i] = 1
    while sizes.sum() > n:
        sizes[int(np.argmax(sizes))] -= 1
    sizes[0] += n - sizes.sum()
    for name, size, r in zip(("train", "val", "test"), sizes, ratios):
        if size == 0:
            logger.warning("split leaves the %s partition empty (ratio %.3g)", name, r)

    uids = np.array(dataset.uids, dtype=object)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    shuffled = uids[order].tolist()
    a, b = sizes[0], sizes[0] + sizes[1]
    return (dataset.subset(shuffled[:a]), dataset.subset(shuffled[a:b]), dataset.subset(shuffled[b:]))


@dataclass
class UserReport:
    uid: str
    num_points: int
    sparsity: float
    violations: List[str] = field(default_factory=list)


@dataclass
class ValidationReport:
    users: List[UserReport]

    @property
    def ok(self) -> bool:
        return all(not u.violations for u in self.users)

    def to_text(self) -> str:
        lines = [f"users={len(self.users)}", f"bounds_ok={str(self.ok).lower()}"]
        if self.users:
            counts = np.array([u.num_points for u in self.users])
            fill = np.array([u.sparsity for u in self.users])
            lines += [f"points_total={int(counts.sum())}",
                      f"points_mean={counts.mean():.6g}",
                      f"sparsity_mean={fill.mean():.6g}"]
        for u in self.users:
            line = f"user={u.uid} points={u.num_points} sparsity={u.sparsity:.6g}"
            if u.violations:
                line += " violations=" + ";".join(u.violations)
            lines.append(line)
        return "\n".join(lines) + "\n"


def validate(dataset: Dataset) -> ValidationReport:
    """Per-user point counts, day-slot coverage and any bound violations.

    ``sparsity`` is the populated fraction of the ``num_days * slots_per_day``
    grid, so 1.0 means every slot is observed.
    """
    total = dataset.time.num_days * dataset.time.slots_per_day
    users = []
    for traj in dataset:
        violations = []
        try:
            _check_bounds(traj.points, dataset.grid, dataset.time, traj.uid)
        except DataError as exc:
            violations.append(str(exc))
        users.append(UserReport(traj.uid, len(traj), len(traj) / total, violations))
    return ValidationReport(users)
