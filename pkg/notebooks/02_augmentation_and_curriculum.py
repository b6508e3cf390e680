"""
Symmetric copies and an easy-to-hard schedule
=============================================

Mirror trajectories to multiply the training set, check what changes and
what does not, and build the three-stage entropy curriculum.
"""

import numpy as np

from mobcurriculum.augment import AugmentOp, augment_dataset, augment_trajectory
from mobcurriculum.curriculum import DEFAULT_STAGES, build_curriculum, schedule_iter
from mobcurriculum.entropy import trajectory_entropy
from mobcurriculum.features import DIRECTIONS, direction_classes
from mobcurriculum.synth import desk_config, synth_generate

res = synth_generate(desk_config(40, seed=0))
ds = res.dataset
t = ds.trajectories["0"]
print("user 0 is a", res.archetypes["0"], "with", len(t), "points")

# Each flip keeps the visiting pattern, so entropy is unchanged; headings are mirrored.
for op in AugmentOp:
    v = augment_trajectory(t, op, ds.grid)
    heads = direction_classes(np.diff(v.x), np.diff(v.y))
    moves = heads[heads != 8][:6]
    print(f"{op.name:11s} uid={v.uid:5s} H={trajectory_entropy(v, ds.grid):.4f} "
          f"first moves {[DIRECTIONS[i] for i in moves]}")

aug = augment_dataset(ds)
print(len(ds), "users ->", len(aug), "trajectories")

# Stage s admits everything with entropy below its threshold and trains on a longer horizon.
sched = build_curriculum(aug)
for s, spec in zip(sched.stage_numbers, DEFAULT_STAGES):
    entries = sched.stage_entries(s)
    print(f"stage {s}: entropy < {spec.entropy_upper}, horizon {spec.horizon_days} days, {len(entries)} entries, "
          f"entropy {entries[0].entropy:.2f}..{entries[-1].entropy:.2f}")

first = next(iter(schedule_iter(sched, batch_size=8)))
print("first batch:", [e.uid for e in first.entries])
print(sched.to_csv().splitlines()[:4])
