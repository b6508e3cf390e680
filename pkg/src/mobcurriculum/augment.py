"""Mirroring and 180-degree rotation of trajectories and POI tables."""

from __future__ import annotations

from enum import Enum
from typing import Tuple

import numpy as np

from .core import Dataset, GridSpec, PoiTable, Trajectory


class AugmentOp(Enum):
    IDENTITY = "identity"
    MIRROR_H = "mirror_h"
    MIRROR_V = "mirror_v"
    ROTATE_180 = "rotate_180"

    @property
    def flips(self) -> Tuple[bool, bool]:
        """(flip x, flip y)."""
        return _FLIPS[self]

    @property
    def tag(self) -> str:
        return _TAGS[self]


_FLIPS = {
    AugmentOp.IDENTITY: (False, False),
    AugmentOp.MIRROR_H: (True, False),
    AugmentOp.MIRROR_V: (False, True),
    AugmentOp.ROTATE_180: (True, True),
}
_TAGS = {AugmentOp.IDENTITY: "", AugmentOp.MIRROR_H: "#h", AugmentOp.MIRROR_V: "#v", AugmentOp.ROTATE_180: "#r"}
_BY_TAG = {tag: op for op, tag in _TAGS.items()}

VARIANT_NAMES = {AugmentOp.IDENTITY: "real", AugmentOp.MIRROR_H: "h", AugmentOp.MIRROR_V: "v",
                 AugmentOp.ROTATE_180: "r"}


def split_uid(uid: str) -> Tuple[str, AugmentOp]:
    """``"17#h"`` -> ``("17", MIRROR_H)``; untagged uids are real trajectories."""
    base, sep, tag = uid.rpartition("#")
    if sep and ("#" + tag) in _BY_TAG:
        return base, _BY_TAG["#" + tag]
    return uid, AugmentOp.IDENTITY


def variant_of(uid: str) -> AugmentOp:
    return split_uid(uid)[1]


def is_real(uid: str) -> bool:
    return variant_of(uid) is AugmentOp.IDENTITY


def apply_to_cells(x, y, op: AugmentOp, grid: GridSpec):
    fx, fy = op.flips
    x = grid.x_max - x if fx else x
    y = grid.y_max - y if fy else y
    return x, y


def augment_trajectory(traj: Trajectory, op: AugmentOp, grid: GridSpec) -> Trajectory:
    """Reflect the cells of ``traj``; timestamps are untouched.

    Applying an op to an already tagged trajectory composes the reflections, so
    every op is an involution on the full (uid, points) pair.
    """
    pts = traj.points.copy()
    pts[:, 2], pts[:, 3] = apply_to_cells(pts[:, 2], pts[:, 3], op, grid)
    base, current = split_uid(traj.uid)
    fx = current.flips[0] ^ op.flips[0]
    fy = current.flips[1] ^ op.flips[1]
    combined = next(o for o, f in _FLIPS.items() if f == (fx, fy))
    return Trajectory(base + combined.tag, pts)


def augment_dataset(dataset: Dataset) -> Dataset:
    """Identity plus the three reflections of every real trajectory (4x the count).

    The POI table is shared unchanged; feature building looks POI up through the
    variant's inverse reflection instead of materializing four tables.
    """
    out = {}
    for traj in dataset:
        if not is_real(traj.uid):
            raise ValueError(f"dataset already contains augmented trajectory {traj.uid!r}")
        for op in AugmentOp:
            variant = augment_trajectory(traj, op, dataset.grid)
            out[variant.uid] = variant
    return Dataset(dataset.grid, dataset.time, out, dataset.poi)


def transform_poi(poi: PoiTable, op: AugmentOp, grid: GridSpec) -> PoiTable:
    """Move every cell's category vector to the op-image cell."""
    counts = poi.counts
    fx, fy = op.flips
    if fx:
        counts = counts[::-1, :, :]
    if fy:
        counts = counts[:, ::-1, :]
    return PoiTable(np.ascontiguousarray(counts))
