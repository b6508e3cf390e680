"""Pipeline configuration file: a JSON document with a fixed schema.

Example (every key optional; missing keys take the defaults shown by
``mobcurriculum init-config``)::

    {
      "paths": {"data": "traj.csv", "poi": null, "output_dir": "runs"},
      "grid": {"width": 200, "height": 200, "cell_size_m": 500.0},
      "time": {"slots_per_day": 48, "num_days": 75},
      "features": {"top_k": 3, "timedelta_cap": 48, ...},
      "stages": [{"entropy_upper": 0.4, "horizon_days": 3, "epochs": 20}, ...],
      "model": {"embed_dim": 32, "num_layers": 2, ...},
      "optimizer": {"lr": 5e-05, ...},
      "geobleu": {"max_n": 3, "weights": [...], "beta": 0.5, "matching": "greedy"},
      "synth": {"num_users": 100, ...},
      "observe_days": 63, "horizon_days": 15, "finetune_epochs": 20,
      "split": [7, 1, 2], "seed": 0
    }

The last stage's ``entropy_upper`` may be ``null`` for "no upper bound".
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Tuple

from .core import GridSpec, TimeSpec
from .curriculum import DEFAULT_STAGES, StageSpec, check_stages
from .features import FeatureConfig
from .metrics import GeoBleuParams
from .model import ModelConfig
from .synth import DESK_GRID, DESK_TIME
from .training import OptimizerConfig

SEED_ENV = "MOBCURRICULUM_SEED"
THREADS_ENV = "MOBCURRICULUM_THREADS"



class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Paths:
    data: Optional[str] = None
    poi: Optional[str] = None
    output_dir: str = "runs"


@dataclass(frozen=True)
class ModelSettings:
    """The architecture knobs of :class:`ModelConfig` that are not derived from the data."""

    embed_dim: int = 32
    num_layers: int = 2
    num_heads: int = 2
    ffn_dim: Optional[int] = None
    interaction_heads: Optional[int] = None
    lambda_dist: float = 0.5
    lambda_dir: float = 0.8
    dropout: float = 0.1
    learned_positions: bool = False
    max_positions: int = 4096
    embed_init_std: float = 0.3


@dataclass(frozen=True)
class SynthSettings:
    num_users: int = 100
    mix: Tuple[float, float, float] = (0.4, 0.4, 0.2)
    noise_prob: float = 0.05
    sparsity: float = 0.5
    num_categories: int = 85
    num_anchors: int = 10


@dataclass(frozen=True)
class PipelineConfig:
    paths: Paths = field(default_factory=Paths)
    grid: GridSpec = field(default_factory=GridSpec)
    time: TimeSpec = field(default_factory=TimeSpec)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    stages: Tuple[StageSpec, ...] = DEFAULT_STAGES
    model: ModelSettings = field(default_factory=ModelSettings)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    geobleu: GeoBleuParams = field(default_factory=GeoBleuParams)
    synth: SynthSettings = field(default_factory=SynthSettings)
    observe_days: int = 63
    horizon_days: int = 15
    finetune_epochs: int = 20
    split: Tuple[int, int, int] = (7, 1, 2)
    seed: int = 0

    def __post_init__(self):
        check_stages(self.stages)
        if self.observe_days < 1 or self.horizon_days < 1:
            raise ConfigError("observe_days and horizon_days must be >= 1")
        if self.observe_days >= self.time.num_days:
            raise ConfigError(f"observe_days={self.observe_days} leaves no target days out of {self.time.num_days}")
        try:
            self.model_config()
        except ValueError as exc:
            raise ConfigError(f"section 'model': {exc}") from exc

    # ------------------------------------------------------------------ presets

    @classmethod
    def desk(cls, **kw) -> "PipelineConfig":
        """The CPU-sized setting used by the experiments: 20x20 grid, 8 slots, 30 days."""
        base = dict(grid=DESK_GRID, time=DESK_TIME, features=FeatureConfig(timedelta_cap=8),
                    stages=tuple(replace(s, epochs=10) for s in DEFAULT_STAGES),
                    optimizer=OptimizerConfig(lr=3e-3, finetune_lr=1.2e-3, batch_size=32, shuffle_within_stage=True),
                    synth=SynthSettings(num_users=500), observe_days=15, finetune_epochs=5)
        base.update(kw)
        return cls(**base)

    # ------------------------------------------------------------------ derived objects

    def model_config(self, num_poi_categories: int = 85) -> ModelConfig:
        return ModelConfig.for_data(self.grid, self.time, timedelta_cap=self.features.timedelta_cap,
                                    num_poi_categories=num_poi_categories, seed=self.seed, **asdict(self.model))

    def optimizer_config(self) -> OptimizerConfig:
        return replace(self.optimizer, seed=self.seed)

    # ------------------------------------------------------------------ file form

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = [dict(s, entropy_upper=None if math.isinf(s["entropy_upper"]) else s["entropy_upper"])
                       for s in d["stages"]]
        return _listify(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}")
        kw = {}
        sections = {"paths": Paths, "grid": GridSpec, "time": TimeSpec, "features": FeatureConfig,
                    "model": ModelSettings, "optimizer": OptimizerConfig, "geobleu": GeoBleuParams,
                    "synth": SynthSettings}
        for name, typ in sections.items():
            if name in d:
                kw[name] = _section(typ, d[name], name)
        if "stages" in d:
            if not isinstance(d["stages"], list):
                raise ConfigError("stages must be a list")
            stages = []
            for i, s in enumerate(d["stages"]):
                s = dict(s)
                if s.get("entropy_upper") is None:
                    s["entropy_upper"] = math.inf
                stages.append(_section(StageSpec, s, f"stages[{i}]"))
            kw["stages"] = tuple(stages)
        for name in ("observe_days", "horizon_days", "finetune_epochs", "seed"):
            if name in d:
                if not isinstance(d[name], int) or isinstance(d[name], bool):
                    raise ConfigError(f"{name} must be an integer")
                kw[name] = d[name]
        if "split" in d:
            kw["split"] = tuple(d["split"])
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        return cls.from_json(p.read_text())

    def with_env_overrides(self, environ=os.environ) -> "PipelineConfig":
        """Apply the seed override; the thread override is handled by the caller."""
        if SEED_ENV in environ:
            try:
                return replace(self, seed=int(environ[SEED_ENV]))
            except ValueError as exc:
                raise ConfigError(f"{SEED_ENV} must be an integer") from exc
        return self

    def digest(self) -> str:
        """Hash of everything that affects results; the output directory is excluded."""
        d = self.to_dict()
        d["paths"] = {k: v for k, v in d["paths"].items() if k != "output_dir"}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]

    def run_dir(self) -> Path:
        return Path(self.paths.output_dir) / f"run-{self.digest()}"


def _listify(obj):
    if isinstance(obj, dict):
        return {k: _listify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_listify(v) for v in obj]
    return obj


def _section(typ, value, name):
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    known = {f.name for f in fields(typ)}
    unknown = sorted(set(value) - known)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r} in section {name!r}")
    value = {k: tuple(v) if isinstance(v, list) else v for k, v in value.items()}
    try:
        return typ(**value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {name!r}: {exc}") from exc
