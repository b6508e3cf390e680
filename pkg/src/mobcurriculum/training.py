"""Curriculum pretraining, finetuning and parallel prediction."""

from __future__ import annotations

import logging
import math
import time as _time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .augment import is_real
from .core import Dataset, Trajectory
from .curriculum import CurriculumSchedule, schedule_iter
from .features import (FeatureConfig, ModelSample, SampleError, all_slots, build_model_sample, build_query)
from .model import MoBERT, ModelConfig, batch_loss, build_model, collate

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 5e-5
    finetune_lr: float = 2e-5
    batch_size: int = 128
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    shuffle_within_stage: bool = False
    seed: int = 0


@dataclass
class EpochRecord:
    epoch: int
    stage: int
    train_loss: float
    val_loss: float
    loc_loss: float
    dist_loss: float
    dir_loss: float
    seconds: float


@dataclass
class TrainHistory:
    records: List[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def train_loss(self) -> List[float]:
        return [r.train_loss for r in self.records]

    @property
    def val_loss(self) -> List[float]:
        return [r.val_loss for r in self.records]

    def extend(self, other: "TrainHistory") -> "TrainHistory":
        offset = len(self.records)
        for r in other.records:
            self.records.append(EpochRecord(**{**asdict(r), "epoch": r.epoch + offset}))
        return self

    def epochs_to_reach(self, target: float, which: str = "val") -> Optional[int]:
        """1-based epoch count at which the loss first drops to ``target`` or below."""
        values = self.val_loss if which == "val" else self.train_loss
        for i, v in enumerate(values, start=1):
            if v <= target:
                return i
        return None

    def to_csv(self, include_time: bool = True) -> str:
        """One row per epoch; leave out wall-clock seconds for byte-reproducible files."""
        cols = ["epoch", "stage", "train_loss", "val_loss", "loc_loss", "dist_loss", "dir_loss"]
        lines = [",".join(cols + (["seconds"] if include_time else []))]
        for r in self.records:
            row = f"{r.epoch},{r.stage},{r.train_loss!r},{r.val_loss!r},{r.loc_loss!r},{r.dist_loss!r},{r.dir_loss!r}"
            lines.append(row + (f",{r.seconds:.3f}" if include_time else ""))
        return "\n".join(lines) + "\n"


@contextmanager
def deterministic_math(enabled: bool = True):
    """Single-threaded, deterministic torch kernels for bit-reproducible runs."""
    if not enabled:
        yield
        return
    threads = torch.get_num_threads()
    prev = torch.are_deterministic_algorithms_enabled()
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(prev)
        torch.set_num_threads(threads)


class SampleStore:
    """Builds and caches samples keyed by (uid, horizon)."""

    def __init__(self, dataset: Dataset, features: FeatureConfig, observe_days: int):
        self.dataset = dataset
        self.features = features
        self.observe_days = observe_days
        self._cache: Dict[Tuple[str, int], Optional[ModelSample]] = {}

    def get(self, uid: str, horizon_days: int) -> Optional[ModelSample]:
        key = (uid, horizon_days)
        if key not in self._cache:
            try:
                self._cache[key] = build_model_sample(
                    self.dataset.trajectories[uid], self.dataset.poi, self.features, self.observe_days,
                    horizon_days, self.dataset.grid, self.dataset.time)
            except SampleError:
                self._cache[key] = None
        return self._cache[key]

    def samples(self, uids: Iterable[str], horizon_days: int) -> List[ModelSample]:
        out = [self.get(u, horizon_days) for u in uids]
        return [s for s in out if s is not None]


def _batches(samples: Sequence[ModelSample], batch_size: int):
    for i in range(0, len(samples), batch_size):
        yield collate(samples[i:i + batch_size])


@torch.no_grad()
def evaluate_loss(model: MoBERT, samples: Sequence[ModelSample], batch_size: int = 256) -> Tuple[float, ...]:
    """Label-weighted mean of (total, loc, dist, dir) loss over ``samples``."""
    if not samples:
        return (math.nan,) * 4
    was_training = model.training
    model.eval()
    sums = np.zeros(4)
    count = 0
    for batch in _batches(samples, batch_size):
        n = int((batch.loc != -100).sum())
        parts = batch_loss(model, batch)
        sums += n * np.array([p.item() for p in parts])
        count += n
    model.train(was_training)
    return tuple(float(v) for v in sums / count)


def _run_epoch(model, optimizer, batches, stage: int, epoch: int, val_samples) -> EpochRecord:
    start = _time.perf_counter()
    model.train()
    sums = np.zeros(4)
    count = 0
    for batch in batches:
        parts = batch_loss(model, batch)
        if not torch.isfinite(parts.total):
            raise TrainingError(f"non-finite loss at epoch {epoch} (stage {stage}): "
                                f"loc={parts.loc.item()} dist={parts.dist.item()} dir={parts.dir.item()}")
        optimizer.zero_grad()
        parts.total.backward()
        optimizer.step()
        n = int((batch.loc != -100).sum())
        sums += n * np.array([p.item() for p in parts])
        count += n
    means = sums / max(count, 1)
    val = evaluate_loss(model, val_samples)[0] if val_samples else math.nan
    return EpochRecord(epoch, stage, float(means[0]), float(val), float(means[1]), float(means[2]), float(means[3]),
                       _time.perf_counter() - start)


def train(schedule: CurriculumSchedule, store: SampleStore, cfg: ModelConfig, opt: OptimizerConfig = OptimizerConfig(),
          val_samples: Sequence[ModelSample] = (), model: Optional[MoBERT] = None, lr: Optional[float] = None,
          log_every: int = 0) -> Tuple[MoBERT, TrainHistory]:
    """Run every stage of ``schedule`` for its configured epochs, in order.

    One Adam optimizer spans all stages. Entries whose window yields no
    observation or no target are skipped.
    """
    if model is None:
        model = build_model(cfg)
    torch.manual_seed(opt.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=opt.lr if lr is None else lr, betas=opt.betas,
                                 eps=opt.eps, weight_decay=opt.weight_decay)
    history = TrainHistory()
    epoch = 0
    for stage_no, spec in zip(range(1, len(schedule.stages) + 1), schedule.stages):
        if not schedule.stage_entries(stage_no):
            continue
        for _ in range(spec.epochs):
            epoch += 1

            def batches(stage_no=stage_no, epoch=epoch):
                for b in schedule_iter(schedule, opt.batch_size, shuffle=opt.shuffle_within_stage,
                                       seed=opt.seed, stage=stage_no, epoch=epoch):
                    samples = [s for s in (store.get(e.uid, e.horizon_days) for e in b.entries) if s is not None]
                    if samples:
                        yield collate(samples)

            rec = _run_epoch(model, optimizer, batches(), stage_no, epoch, val_samples)
            history.records.append(rec)
            if log_every and epoch % log_every == 0:
                logger.info("epoch %d stage %d train %.4f val %.4f", epoch, stage_no, rec.train_loss, rec.val_loss)
    return model, history


def finetune(model: MoBERT, schedule: CurriculumSchedule, store: SampleStore, opt: OptimizerConfig = OptimizerConfig(),
             val_samples: Sequence[ModelSample] = ()) -> Tuple[MoBERT, TrainHistory]:
    """Continue training on real trajectories only, at the reduced finetune learning rate."""
    fake = [e.uid for e in schedule if not is_real(e.uid)]
    if fake:
        raise TrainingError(f"finetuning requires real trajectories only; got augmented {fake[0]!r}")
    return train(schedule, store, model.cfg, opt, val_samples, model=model, lr=opt.finetune_lr)


@dataclass
class Prediction:
    uid: str
    times: np.ndarray  # (n, 2) day, slot
    cells: np.ndarray  # (n, 2) x, y
    dist_class: np.ndarray
    dir_class: np.ndarray


@torch.no_grad()
def predict_samples(model: MoBERT, samples: Sequence[ModelSample], height: int,
                    batch_size: int = 64) -> List[Prediction]:
    """One forward pass per batch; every masked position is decoded by argmax independently."""
    model.eval()
    out = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        batch = collate(chunk)
        logits = model(batch.ids, batch.poi, batch.pad)
        loc = logits.loc.argmax(-1).numpy()
        dist = logits.dist.argmax(-1).numpy()
        dirs = logits.dir.argmax(-1).numpy()
        for j, s in enumerate(chunk):
            n = len(s)
            sel = s.target
            cells = loc[j, :n][sel]
            out.append(Prediction(s.uid, s.ids[sel][:, 1:3].copy(),
                                  np.stack([cells // height, cells % height], axis=1),
                                  dist[j, :n][sel], dirs[j, :n][sel]))
    return out


def predict(model: MoBERT, prefix: Trajectory, horizon_days: int, features: FeatureConfig, dataset: Dataset,
            observe_days: Optional[int] = None, target_times: Optional[np.ndarray] = None) -> Prediction:
    """Predict a location for every target slot after the observed prefix.

    Without ``target_times`` every slot of the ``horizon_days`` following the
    observation window is queried.
    """
    if horizon_days < 1:
        raise ValueError("horizon_days must be >= 1")
    if observe_days is None:
        observe_days = int(prefix.d.max()) + 1
    if target_times is None:
        target_times = all_slots(observe_days, horizon_days, dataset.time)
    sample = build_query(prefix, dataset.poi, features, observe_days, target_times, dataset.grid, dataset.time)
    return predict_samples(model, [sample], dataset.grid.height)[0]
