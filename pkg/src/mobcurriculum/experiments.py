"""Desk-scale experiments: curriculum convergence and multi-task loss weighting.

Both experiments run on a synthetic population split by user into
train/validation/test partitions. Every source of randomness is derived from
the experiment seed, so a run is reproducible end to end on one thread.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .augment import augment_dataset
from .core import Dataset, split_by_user
from .curriculum import DEFAULT_STAGES, StageSpec, build_curriculum, flat_schedule
from .features import FeatureConfig, ModelSample
from .metrics import GeoBleuParams, MetricsReport, evaluate
from .model import ModelConfig
from .synth import desk_config, synth_generate
from .training import OptimizerConfig, SampleStore, TrainHistory, deterministic_math, predict_samples, train

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DeskSettings:
    """Hyperparameters shared by the desk-scale experiments."""

    num_users: int = 500
    observe_days: int = 15
    horizon_days: int = 15
    timedelta_cap: int = 8
    embed_dim: int = 32
    num_layers: int = 2
    num_heads: int = 2
    dropout: float = 0.1
    lr: float = 3e-3
    batch_size: int = 32
    epochs_per_stage: int = 10
    split: Tuple[int, int, int] = (7, 1, 2)

    def features(self) -> FeatureConfig:
        return FeatureConfig(timedelta_cap=self.timedelta_cap)

    def model_config(self, dataset: Dataset, seed: int, **kw) -> ModelConfig:
        base = dict(embed_dim=self.embed_dim, num_layers=self.num_layers, num_heads=self.num_heads,
                    dropout=self.dropout, timedelta_cap=self.timedelta_cap, seed=seed,
                    num_poi_categories=dataset.poi.num_categories if dataset.poi is not None else 85)
        base.update(kw)
        return ModelConfig.for_data(dataset.grid, dataset.time, **base)

    def optimizer(self, seed: int) -> OptimizerConfig:
        return OptimizerConfig(lr=self.lr, finetune_lr=0.4 * self.lr, batch_size=self.batch_size, seed=seed,
                               shuffle_within_stage=True)

    def stages(self) -> Tuple[StageSpec, ...]:
        return tuple(replace(s, epochs=self.epochs_per_stage) for s in DEFAULT_STAGES)


@dataclass
class DeskData:
    train: Dataset
    val: Dataset
    test: Dataset
    val_samples: List[ModelSample]
    test_samples: List[ModelSample]


def desk_data(settings: DeskSettings, seed: int) -> DeskData:
    population = synth_generate(desk_config(settings.num_users, seed=seed)).dataset
    tr, va, te = split_by_user(population, settings.split, seed)
    fc = settings.features()
    val = SampleStore(va, fc, settings.observe_days).samples(va.uids, settings.horizon_days)
    test = SampleStore(te, fc, settings.observe_days).samples(te.uids, settings.horizon_days)
    return DeskData(tr, va, te, val, test)


def sample_truths(samples: Sequence[ModelSample], height: int) -> Dict[str, np.ndarray]:
    """Ground-truth target cells of each sample as ``(n, 2)`` x, y arrays."""
    out = {}
    for s in samples:
        cells = s.loc_label[s.target]
        out[s.uid] = np.stack([cells // height, cells % height], axis=1)
    return out


def score(model, samples: Sequence[ModelSample], height: int,
          params: GeoBleuParams = GeoBleuParams()) -> MetricsReport:
    preds = predict_samples(model, samples, height)
    return evaluate({p.uid: p.cells for p in preds}, sample_truths(samples, height), params)


# --------------------------------------------------------------------------- convergence


@dataclass
class ConvergenceResult:
    seed: int
    curriculum: TrainHistory
    baseline: TrainHistory
    target: float
    curriculum_epochs: Optional[int]
    baseline_epochs: Optional[int]
    ablation: Optional[TrainHistory] = None

    @property
    def speedup(self) -> float:
        if self.curriculum_epochs is None:
            return 0.0
        if self.baseline_epochs is None:
            return math.inf
        return self.baseline_epochs / self.curriculum_epochs

    @property
    def curriculum_faster(self) -> bool:
        return self.speedup > 1.0

    def summary(self) -> str:
        return (f"seed={self.seed} target={self.target:.4f} curriculum_epochs={self.curriculum_epochs} "
                f"baseline_epochs={self.baseline_epochs} speedup={self.speedup:.2f}")


def convergence_target(*histories: TrainHistory) -> float:
    """Loosest of the runs' best validation losses, so every run can reach it."""
    return max(min(h.val_loss) for h in histories)


def convergence_experiment(seed: int, settings: DeskSettings = DeskSettings(),
                           with_ablation: bool = False) -> ConvergenceResult:
    """Curriculum pipeline against conventional training at the same epoch budget.

    The curriculum run pretrains on the augmented training users, staged by
    entropy with growing horizons. The baseline trains on the real training
    users, shuffled, at the full horizon. The optional ablation keeps the
    augmented data but drops the staging, isolating the ordering effect.
    """
    data = desk_data(settings, seed)
    fc, opt = settings.features(), settings.optimizer(seed)
    cfg = settings.model_config(data.train, seed)
    stages = settings.stages()
    budget = sum(s.epochs for s in stages)
    with deterministic_math():
        aug = augment_dataset(data.train)
        aug_store = SampleStore(aug, fc, settings.observe_days)
        _, cur = train(build_curriculum(aug, stages), aug_store, cfg, opt, data.val_samples)
        _, base = train(flat_schedule(data.train, settings.horizon_days, budget),
                        SampleStore(data.train, fc, settings.observe_days), cfg, opt, data.val_samples)
        abl = None
        if with_ablation:
            _, abl = train(flat_schedule(aug, settings.horizon_days, budget), aug_store, cfg, opt, data.val_samples)
    target = convergence_target(cur, base)
    res = ConvergenceResult(seed, cur, base, target, cur.epochs_to_reach(target), base.epochs_to_reach(target), abl)
    logger.info("convergence %s", res.summary())
    return res


# --------------------------------------------------------------------------- multi-task weighting


@dataclass
class MTLResult:
    seed: int
    scores: Dict[Tuple[float, float], MetricsReport] = field(default_factory=dict)

    def geobleu(self, lambdas: Tuple[float, float]) -> float:
        return self.scores[lambdas].mean_geobleu


def mtl_experiment(seed: int, lambdas: Sequence[Tuple[float, float]] = ((0.5, 0.8), (0.0, 0.0)),
                   settings: DeskSettings = DeskSettings(), epochs: int = 30, augment: bool = False,
                   data: Optional[DeskData] = None) -> MTLResult:
    """Train one model per (lambda_dist, lambda_dir) pair and score each on the test users.

    Models share the data, initialization seed and batch order; only the
    auxiliary loss weights differ. Training uses a flat schedule at the full
    horizon, which matches a loss-weight grid search.
    """
    data = data or desk_data(settings, seed)
    fc, opt = settings.features(), settings.optimizer(seed)
    train_set = augment_dataset(data.train) if augment else data.train
    store = SampleStore(train_set, fc, settings.observe_days)
    schedule = flat_schedule(train_set, settings.horizon_days, epochs)
    out = MTLResult(seed)
    with deterministic_math():
        for lam in lambdas:
            cfg = settings.model_config(data.train, seed, lambda_dist=lam[0], lambda_dir=lam[1])
            model, _ = train(schedule, store, cfg, opt, ())
            out.scores[tuple(lam)] = score(model, data.test_samples, data.train.grid.height)
            logger.info("mtl seed=%d lambdas=%s geobleu=%.4f", seed, lam, out.scores[tuple(lam)].mean_geobleu)
    return out


def lambda_grid(step: float = 0.1) -> List[Tuple[float, float]]:
    """Every (lambda_dist, lambda_dir) pair on a regular grid over [0, 1]^2."""
    vals = np.round(np.arange(0.0, 1.0 + step / 2, step), 10)
    return [(float(a), float(b)) for a in vals for b in vals]
