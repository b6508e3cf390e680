import math

import numpy as np
import pytest
import torch

from mobcurriculum.augment import augment_dataset
from mobcurriculum.core import Trajectory
from mobcurriculum.curriculum import StageSpec, build_curriculum, finetune_schedule, flat_schedule
from mobcurriculum.experiments import convergence_target, lambda_grid, sample_truths
from mobcurriculum.features import FeatureConfig
from mobcurriculum.model import ModelConfig
from mobcurriculum.training import (EpochRecord, OptimizerConfig, SampleStore, TrainHistory, TrainingError,
                                    deterministic_math, finetune, predict, predict_samples, train)
from mobcurriculum.synth import desk_config, synth_generate

FC = FeatureConfig(timedelta_cap=8)


@pytest.fixture(scope="module")
def commuters():
    return synth_generate(desk_config(50, seed=0, mix=(1.0, 0.0, 0.0))).dataset


def small_cfg(ds, **kw):
    base = dict(embed_dim=16, num_layers=1, num_heads=2, dropout=0.0, timedelta_cap=8)
    base.update(kw)
    return ModelConfig.for_data(ds.grid, ds.time, **base)


def history(vals):
    return TrainHistory([EpochRecord(i + 1, 1, v, v, v, 0, 0, 0.0) for i, v in enumerate(vals)])


def test_epochs_to_reach():
    h = history([5.0, 4.0, 3.5, 3.6, 3.0])
    assert h.epochs_to_reach(3.5) == 3
    assert h.epochs_to_reach(2.0) is None
    assert convergence_target(h, history([4.0, 3.8])) == 3.8
    header = h.to_csv(include_time=False).splitlines()[0].split(",")
    assert header[0] == "epoch" and "val_loss" in header and "seconds" not in header


def test_training_loss_halves_on_commuters(commuters):
    store = SampleStore(commuters, FC, 15)
    opt = OptimizerConfig(lr=3e-3, batch_size=4, seed=0)
    cfg = small_cfg(commuters, embed_dim=32, num_layers=2)
    with deterministic_math():
        _, h = train(flat_schedule(commuters, 15, 10), store, cfg, opt)
    assert h.train_loss[-1] <= 0.5 * h.train_loss[0]


def test_training_is_reproducible(commuters):
    ds = commuters.subset(commuters.uids[:12])
    store = SampleStore(ds, FC, 15)
    opt = OptimizerConfig(lr=1e-3, batch_size=4, seed=1, shuffle_within_stage=True)
    sched = build_curriculum(ds, [StageSpec(0.2, 3, 1), StageSpec(math.inf, 15, 1)])
    with deterministic_math():
        a, ha = train(sched, store, small_cfg(ds, seed=1), opt)
        b, hb = train(sched, store, small_cfg(ds, seed=1), opt)
    assert ha.train_loss == hb.train_loss
    for p, q in zip(a.parameters(), b.parameters()):
        assert torch.equal(p, q)


def test_stage_epochs_follow_schedule(commuters):
    ds = commuters.subset(commuters.uids[:6])
    sched = build_curriculum(ds, [StageSpec(0.5, 3, 2), StageSpec(math.inf, 7, 1)])
    _, h = train(sched, SampleStore(ds, FC, 15), small_cfg(ds), OptimizerConfig(batch_size=8))
    assert [r.stage for r in h] == [s for s in sched.stage_numbers for _ in range(sched.stages[s - 1].epochs)]


def test_finetune_rejects_augmented(commuters):
    ds = commuters.subset(commuters.uids[:4])
    aug = augment_dataset(ds)
    store = SampleStore(aug, FC, 15)
    model, _ = train(flat_schedule(aug, 3, 1), store, small_cfg(ds), OptimizerConfig(batch_size=8))
    with pytest.raises(TrainingError, match="real trajectories"):
        finetune(model, flat_schedule(aug, 15, 1), store)
    _, h = finetune(model, finetune_schedule(aug, epochs=1), store, OptimizerConfig(batch_size=8))
    assert len(h) == 1


def test_prediction_shapes_and_truths(commuters):
    ds = commuters.subset(commuters.uids[:5])
    store = SampleStore(ds, FC, 15)
    model, _ = train(flat_schedule(ds, 15, 1), store, small_cfg(ds), OptimizerConfig(batch_size=8))
    samples = store.samples(ds.uids, 15)
    preds = predict_samples(model, samples, ds.grid.height)
    truths = sample_truths(samples, ds.grid.height)
    for p, s in zip(preds, samples):
        assert p.cells.shape == (s.num_targets, 2) == truths[s.uid].shape
        assert (p.cells >= 0).all() and (p.cells < 20).all()
        assert (p.times[:, 0] >= 15).all()
    # every slot of the following day when no target times are given
    traj = ds.trajectories[ds.uids[0]]
    q = predict(model, Trajectory(traj.uid, traj.window(0, 15)), 1, FC, ds, observe_days=15)
    assert q.times.tolist() == [[15, t] for t in range(8)]


def test_lambda_grid():
    grid = lambda_grid(0.5)
    assert grid == [(0.0, 0.0), (0.0, 0.5), (0.0, 1.0), (0.5, 0.0), (0.5, 0.5), (0.5, 1.0), (1.0, 0.0),
                    (1.0, 0.5), (1.0, 1.0)]
    assert (0.5, 0.8) in lambda_grid(0.1)
