import numpy as np
import pytest

from mobcurriculum.core import GridSpec, TimeSpec, validate
from mobcurriculum.entropy import trajectory_entropy
from mobcurriculum.synth import (SynthConfig, archetype_counts, desk_config, generate_user, synth_entropy_sweep,
                                 synth_generate)


def mean_entropy(res, kind):
    hs = [trajectory_entropy(res.dataset.trajectories[u], res.dataset.grid)
          for u, a in res.archetypes.items() if a == kind]
    return float(np.mean(hs))


def test_archetype_counts_largest_remainder():
    assert archetype_counts(SynthConfig(num_users=10)) == [4, 4, 2]
    assert archetype_counts(SynthConfig(num_users=7)) == [3, 3, 1]
    assert sum(archetype_counts(SynthConfig(num_users=13, mix=(0.5, 0.25, 0.25)))) == 13


def test_mix_validation():
    with pytest.raises(ValueError):
        SynthConfig(mix=(0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        SynthConfig(noise_prob=1.5)
    with pytest.raises(ValueError):
        SynthConfig(num_users=0)


def test_same_seed_same_bytes_and_different_seed_differs():
    a = synth_generate(desk_config(30, seed=5))
    b = synth_generate(desk_config(30, seed=5))
    c = synth_generate(desk_config(30, seed=6))
    assert a.dataset == b.dataset and a.archetypes == b.archetypes
    assert a.dataset != c.dataset


def test_user_independent_of_population_size():
    # per-user seeds: user 3 is identical whether 5 or 50 users are generated
    small = synth_generate(desk_config(5, seed=2, mix=(1.0, 0.0, 0.0)))
    big = synth_generate(desk_config(50, seed=2, mix=(1.0, 0.0, 0.0)))
    assert small.dataset.trajectories["3"] == big.dataset.trajectories["3"]


def test_output_is_valid_and_in_bounds():
    res = synth_generate(desk_config(40, seed=1))
    assert validate(res.dataset).ok
    assert res.dataset.poi.counts.shape == (20, 20, 85)
    assert sorted(res.archetypes.values()).count("random") == 8


def test_archetype_entropy_ordering_on_full_grid():
    res = synth_generate(SynthConfig(num_users=30, seed=0))
    com, exp, rnd = (mean_entropy(res, k) for k in ("commuter", "explorer", "random"))
    assert com < exp < rnd
    assert com < 0.4 and rnd > 0.8


def test_clean_commuter_is_very_regular():
    cfg = SynthConfig(num_users=5, mix=(1.0, 0.0, 0.0), noise_prob=0.0, sparsity=0.0)
    res = synth_generate(cfg)
    assert max(trajectory_entropy(t, res.dataset.grid) for t in res.dataset) < 0.2


def test_random_user_long_sequence_near_one():
    cfg = SynthConfig(num_users=3, mix=(0.0, 0.0, 1.0), sparsity=0.0)
    res = synth_generate(cfg)
    for t in res.dataset:
        assert len(t) >= 2000 and trajectory_entropy(t, res.dataset.grid) > 0.8


def test_desk_population_spans_all_stages():
    res = synth_generate(desk_config(100, seed=0))
    hs = np.array([trajectory_entropy(t, res.dataset.grid) for t in res.dataset])
    assert (hs < 0.4).any() and ((hs >= 0.4) & (hs < 0.65)).any() and (hs >= 0.65).any()


def test_noise_raises_commuter_entropy():
    sweep = synth_entropy_sweep(desk_config(100, seed=3), [0.0, 0.05, 0.1, 0.3, 1.0])
    values = [h for _, h in sweep]
    assert values == sorted(values) and values[0] < values[-1]
    with pytest.raises(ValueError):
        synth_entropy_sweep(SynthConfig(), [0.3, 0.1])


def test_commuter_shape_without_noise():
    cfg = SynthConfig(grid=GridSpec(10, 10), time=TimeSpec(24, 7), noise_prob=0.0, sparsity=0.0)
    traj, (home, work) = generate_user(0, "commuter", cfg)
    cells = {tuple(c) for c in traj.points[:, 2:]}
    assert cells == {home, work}
    weekday_noon = traj.points[(traj.d == 0) & (traj.t == 12)][0, 2:]
    sunday_noon = traj.points[(traj.d == 6) & (traj.t == 12)][0, 2:]
    assert tuple(weekday_noon) == work and tuple(sunday_noon) == home


def test_sparsity_keeps_at_least_one_point():
    cfg = SynthConfig(grid=GridSpec(4, 4), time=TimeSpec(2, 1), sparsity=1.0)
    traj, _ = generate_user(0, "random", cfg)
    assert len(traj) == 1
