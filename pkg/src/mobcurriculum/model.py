"""Desk-scale MoBERT: feature embeddings, feature interaction, encoder and task heads."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import GridSpec, TimeSpec
from .features import IGNORE, ModelSample

NUM_DIST = 4
NUM_DIR = 9
NUM_CHANNELS = 8
CHANNELS = ("location", "day", "slot", "day_of_week", "timedelta", "day_night", "poi", "reserved")


@dataclass(frozen=True)
class ModelConfig:
    num_cells: int
    num_days: int
    slots_per_day: int
    timedelta_cap: int = 48
    num_poi_categories: int = 85
    embed_dim: int = 32
    num_layers: int = 2
    num_heads: int = 2
    ffn_dim: Optional[int] = None
    interaction_heads: Optional[int] = None
    lambda_dist: float = 0.5
    lambda_dir: float = 0.8
    dropout: float = 0.1
    seed: int = 0
    learned_positions: bool = False
    max_positions: int = 4096
    # embeddings start wide so the tied location head separates cells early
    embed_init_std: float = 0.3

    def __post_init__(self):
        if self.embed_dim % self.num_heads:
            raise ValueError("embed_dim must be divisible by num_heads")
        if self.embed_dim % self.interaction_heads_:
            raise ValueError("embed_dim must be divisible by interaction_heads")
        for lam in (self.lambda_dist, self.lambda_dir):
            if not 0.0 <= lam <= 1.0:
                raise ValueError("loss weights must lie in [0, 1]")
        if self.num_layers < 0:
            raise ValueError("num_layers must be >= 0")

    @property
    def ffn_dim_(self) -> int:
        return self.ffn_dim or 4 * self.embed_dim

    @property
    def interaction_heads_(self) -> int:
        return self.interaction_heads or self.num_heads

    @property
    def mask_loc(self) -> int:
        return self.num_cells

    @classmethod
    def for_data(cls, grid: GridSpec, time: TimeSpec, **kw) -> "ModelConfig":
        return cls(num_cells=grid.num_cells, num_days=time.num_days, slots_per_day=time.slots_per_day, **kw)

    @classmethod
    def desk(cls, grid: GridSpec, time: TimeSpec, **kw) -> "ModelConfig":
        base = dict(embed_dim=32, num_layers=2, num_heads=2)
        base.update(kw)
        return cls.for_data(grid, time, **base)

    @classmethod
    def paper_scale(cls, grid: GridSpec = GridSpec(), time: TimeSpec = TimeSpec(), **kw) -> "ModelConfig":
        base = dict(embed_dim=256, num_layers=8, num_heads=8)
        base.update(kw)
        return cls.for_data(grid, time, **base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        self.dropout = nn.Dropout(dropout)
        self.last_weights: Optional[torch.Tensor] = None
        self.keep_weights = False

    def forward(self, x: torch.Tensor, pad_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        # x: [N, L, E]; pad_mask: [N, L], True at padding
        n, length, dim = x.shape
        hd = dim // self.heads
        q, k, v = self.qkv(x).view(n, length, 3, self.heads, hd).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(hd)
        if pad_mask is not None:
            scores = scores.masked_fill(pad_mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        if self.keep_weights:
            self.last_weights = weights.detach()
        out = (self.dropout(weights) @ v).transpose(1, 2).reshape(n, length, dim)
        return self.out(out)


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int, out: int, dropout: float = 0.0):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, out)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return self.fc2(self.dropout(F.gelu(self.fc1(x))))


class EncoderBlock(nn.Module):
    """Post-norm BERT block: attention and GELU FFN, each followed by add & norm."""

    def __init__(self, dim: int, heads: int, ffn_dim: int, dropout: float):
        super().__init__()
        self.attn = MultiHeadSelfAttention(dim, heads, dropout)
        self.norm1 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_dim, dim, dropout)
        self.norm2 = nn.LayerNorm(dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, pad_mask=None):
        x = self.norm1(x + self.dropout(self.attn(x, pad_mask)))
        return self.norm2(x + self.dropout(self.ffn(x)))


class FeatureInteraction(nn.Module):
    """Sum of the channel embeddings plus channel-wise self-attention, summed over channels."""

    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.attn = MultiHeadSelfAttention(dim, heads, dropout)

    def forward(self, stack: torch.Tensor) -> torch.Tensor:
        # stack: [..., C, E]; attention runs over the C channels of each token
        lead = stack.shape[:-2]
        flat = stack.reshape(-1, *stack.shape[-2:])
        inter = self.attn(flat).sum(dim=-2)
        return stack.sum(dim=-2) + inter.reshape(*lead, -1)


class TiedLocationHead(nn.Module):
    """BERT-style prediction head: transform, then score against the location embedding table."""

    def __init__(self, dim: int, embedding: nn.Embedding, num_cells: int):
        super().__init__()
        self.dense = nn.Linear(dim, dim)
        self.norm = nn.LayerNorm(dim)
        self.embedding = embedding
        self.num_cells = num_cells
        self.bias = nn.Parameter(torch.zeros(num_cells))

    def forward(self, x):
        h = self.norm(F.gelu(self.dense(x)))
        # the MASK row is not a valid output class
        return h @ self.embedding.weight[: self.num_cells].T + self.bias


def _init_weights(module: nn.Module, embed_std: float) -> None:
    if isinstance(module, nn.Embedding):
        nn.init.normal_(module.weight, std=embed_std)
    elif isinstance(module, nn.Linear):
        nn.init.normal_(module.weight, std=0.02)
    if isinstance(module, nn.Linear) and module.bias is not None:
        nn.init.zeros_(module.bias)


class Logits(NamedTuple):
    loc: torch.Tensor
    dist: torch.Tensor
    dir: torch.Tensor


class MoBERT(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        e = cfg.embed_dim
        self.emb_loc = nn.Embedding(cfg.num_cells + 1, e)
        self.emb_day = nn.Embedding(cfg.num_days, e)
        self.emb_slot = nn.Embedding(cfg.slots_per_day, e)
        self.emb_dow = nn.Embedding(7, e)
        self.emb_delta = nn.Embedding(cfg.timedelta_cap + 1, e)
        self.emb_daynight = nn.Embedding(2, e)
        # categories, then null, then mask
        self.emb_poi = nn.Embedding(cfg.num_poi_categories + 2, e)
        self.emb_reserved = nn.Parameter(torch.zeros(e))
        self.emb_pos = nn.Embedding(cfg.max_positions, e) if cfg.learned_positions else None
        self.interaction = FeatureInteraction(e, cfg.interaction_heads_, cfg.dropout)
        self.blocks = nn.ModuleList(
            EncoderBlock(e, cfg.num_heads, cfg.ffn_dim_, cfg.dropout) for _ in range(cfg.num_layers))
        self.head_loc = TiedLocationHead(e, self.emb_loc, cfg.num_cells)
        self.head_dist = FeedForward(e, e, NUM_DIST)
        self.head_dir = FeedForward(e, e, NUM_DIR)
        self.dropout = nn.Dropout(cfg.dropout)
        self.apply(lambda m: _init_weights(m, cfg.embed_init_std))
        nn.init.normal_(self.emb_reserved, std=0.02)

    def embed_features(self, ids: torch.Tensor, poi: torch.Tensor) -> torch.Tensor:
        """``[..., M, 6]`` ids and ``[..., M, k]`` POI ids -> ``[..., M, 8, E]`` channel stack."""
        vocab = (self.emb_loc, self.emb_day, self.emb_slot, self.emb_dow, self.emb_delta, self.emb_daynight)
        for col, table in enumerate(vocab):
            c = ids[..., col]
            if c.numel() and (c.min() < 0 or c.max() >= table.num_embeddings):
                raise IndexError(f"{CHANNELS[col]} id out of vocabulary range [0, {table.num_embeddings})")
        if poi.numel() and (poi.min() < 0 or poi.max() >= self.emb_poi.num_embeddings):
            raise IndexError(f"poi id out of vocabulary range [0, {self.emb_poi.num_embeddings})")
        chans = [table(ids[..., col]) for col, table in enumerate(vocab)]
        chans.append(self.emb_poi(poi).mean(dim=-2))
        chans.append(self.emb_reserved.expand_as(chans[0]))
        return torch.stack(chans, dim=-2)

    def encode(self, fused: torch.Tensor, pad_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        h = fused
        if self.emb_pos is not None:
            h = h + self.emb_pos(torch.arange(h.shape[-2], device=h.device))
        h = self.dropout(h)
        for block in self.blocks:
            h = block(h, pad_mask)
        return h

    def predict_heads(self, hidden: torch.Tensor) -> Logits:
        return Logits(self.head_loc(hidden), self.head_dist(hidden), self.head_dir(hidden))

    def forward(self, ids, poi, pad_mask=None) -> Logits:
        stack = self.embed_features(ids, poi)
        fused = self.interaction(stack)
        return self.predict_heads(self.encode(fused, pad_mask))

    def attention_maps(self) -> List[torch.Tensor]:
        return [b.attn.last_weights for b in self.blocks]

    def debug(self, on: bool = True) -> None:
        """Keep softmax weights of every attention layer for inspection."""
        for m in self.modules():
            if isinstance(m, MultiHeadSelfAttention):
                m.keep_weights = on


def build_model(cfg: ModelConfig, dtype=torch.float32) -> MoBERT:
    torch.manual_seed(cfg.seed)
    return MoBERT(cfg).to(dtype)


class Batch(NamedTuple):
    ids: torch.Tensor
    poi: torch.Tensor
    pad: torch.Tensor
    target: torch.Tensor
    loc: torch.Tensor
    dist: torch.Tensor
    dir: torch.Tensor


def collate(samples: Sequence[ModelSample]) -> Batch:
    """Right-pad samples to the longest sequence; padding is excluded from attention and loss."""
    if not samples:
        raise ValueError("cannot collate an empty batch")
    b, m, k = len(samples), max(len(s) for s in samples), samples[0].poi.shape[1]
    ids = np.zeros((b, m, samples[0].ids.shape[1]), dtype=np.int64)
    poi = np.zeros((b, m, k), dtype=np.int64)
    pad = np.ones((b, m), dtype=bool)
    target = np.zeros((b, m), dtype=bool)
    labels = np.full((3, b, m), IGNORE, dtype=np.int64)
    for i, s in enumerate(samples):
        n = len(s)
        ids[i, :n], poi[i, :n], pad[i, :n], target[i, :n] = s.ids, s.poi, False, s.target
        labels[:, i, :n] = s.loc_label, s.dist_label, s.dir_label
    t = torch.from_numpy
    return Batch(t(ids), t(poi), t(pad), t(target), t(labels[0]), t(labels[1]), t(labels[2]))


class LossBreakdown(NamedTuple):
    total: torch.Tensor
    loc: torch.Tensor
    dist: torch.Tensor
    dir: torch.Tensor


def multitask_loss(logits: Logits, loc, dist, dir, lambda_dist: float, lambda_dir: float) -> LossBreakdown:
    """Mean cross-entropy per task over labeled positions, combined as loc + l1*dist + l2*dir."""
    if not (loc != IGNORE).any():
        raise ValueError("no labeled (masked) positions in batch")
    l_loc = F.cross_entropy(logits.loc.reshape(-1, logits.loc.shape[-1]), loc.reshape(-1), ignore_index=IGNORE)
    l_dist = F.cross_entropy(logits.dist.reshape(-1, NUM_DIST), dist.reshape(-1), ignore_index=IGNORE)
    l_dir = F.cross_entropy(logits.dir.reshape(-1, NUM_DIR), dir.reshape(-1), ignore_index=IGNORE)
    return LossBreakdown(l_loc + lambda_dist * l_dist + lambda_dir * l_dir, l_loc, l_dist, l_dir)


def batch_loss(model: MoBERT, batch: Batch, lambda_dist=None, lambda_dir=None) -> LossBreakdown:
    cfg = model.cfg
    logits = model(batch.ids, batch.poi, batch.pad)
    return multitask_loss(logits, batch.loc, batch.dist, batch.dir,
                          cfg.lambda_dist if lambda_dist is None else lambda_dist,
                          cfg.lambda_dir if lambda_dir is None else lambda_dir)


@dataclass
class GradCheckReport:
    max_rel_error: float
    num_checked: int
    per_group: Dict[str, float]

    def summary(self) -> str:
        groups = " ".join(f"{k}={v:.2e}" for k, v in sorted(self.per_group.items()))
        return f"max_rel_error={self.max_rel_error:.3e} checked={self.num_checked} {groups}"


def grad_check(model: MoBERT, batch: Batch, eps: float = 1e-5, num_params: int = 200, seed: int = 0,
               floor: float = 1e-8, resolvable: float = 1e-5) -> GradCheckReport:
    """Compare autograd gradients of the total loss with central finite differences.

    Runs on a float64 copy with dropout off. Entries are sampled from every
    parameter tensor (at least two each), up to ``num_params`` in total.
    Sampling prefers entries whose gradient is at least ``resolvable``: a
    central difference on a loss of order 1 carries roughly ``1e-16 / eps``
    of rounding noise, so relative error is meaningless for gradients far
    below that scale. Tensors without enough such entries fall back to
    non-zero entries, then to any entry. Relative error is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    m = MoBERT(model.cfg).to(torch.float64)
    m.load_state_dict({k: v.to(torch.float64) for k, v in model.state_dict().items()})
    m.eval()
    loss = batch_loss(m, batch).total
    if not torch.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    m.zero_grad()
    loss.backward()

    named = [(n, p) for n, p in m.named_parameters()]
    rng = np.random.default_rng(seed)
    per_tensor = max(2, math.ceil(num_params / len(named)))
    picks = []
    for name, p in named:
        g = p.grad.detach().reshape(-1).numpy()
        pool = np.flatnonzero(np.abs(g) >= resolvable)
        if len(pool) < per_tensor:
            pool = np.flatnonzero(g)
        if len(pool) < per_tensor:
            pool = np.arange(g.size)
        chosen = rng.choice(pool, size=min(per_tensor, pool.size), replace=False)
        picks += [(name, p, int(i)) for i in np.sort(chosen)]

    per_group: Dict[str, float] = {}
    worst = 0.0
    with torch.no_grad():
        for name, p, i in picks:
            flat = p.view(-1)
            orig = flat[i].item()
            flat[i] = orig + eps
            up = batch_loss(m, batch).total.item()
            flat[i] = orig - eps
            down = batch_loss(m, batch).total.item()
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            analytic = p.grad.view(-1)[i].item()
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
            group = name.split(".")[0]
            per_group[group] = max(per_group.get(group, 0.0), err)
            worst = max(worst, err)
    return GradCheckReport(worst, len(picks), per_group)


CHECKPOINT_VERSION = 1


def save_checkpoint(model: MoBERT, path, extra: Optional[dict] = None) -> None:
    torch.save({"format": "mobcurriculum.mobert", "version": CHECKPOINT_VERSION,
                "config": model.cfg.to_dict(), "state": model.state_dict(), "extra": extra or {}}, path)


def load_checkpoint(path) -> MoBERT:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if blob.get("format") != "mobcurriculum.mobert" or blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version {CHECKPOINT_VERSION} MoBERT checkpoint")
    cfg = ModelConfig.from_dict(blob["config"])
    model = MoBERT(cfg)
    expected = model.state_dict()
    state = blob["state"]
    if set(state) != set(expected):
        raise ValueError(f"{path}: parameter names do not match the config")
    for k, v in state.items():
        if v.shape != expected[k].shape:
            raise ValueError(f"{path}: {k} has shape {tuple(v.shape)}, config expects {tuple(expected[k].shape)}")
    model.load_state_dict(state)
    return model
