"""Entropy-guided curriculum learning for next-location prediction.

Pipeline: LZ entropy per user, geometric augmentation, entropy-staged
curriculum, a BERT-style masked location model with auxiliary distance and
direction heads, and GEO-BLEU / DTW evaluation.
"""

__version__ = "0.1.0"

from .core import DataError, Dataset, GridSpec, PoiTable, TimeSpec, Trajectory, TrajectoryPoint
from .entropy import fano_max_accuracy, lz_entropy, lz_parse, normalized_entropy, trajectory_entropy
from .augment import AugmentOp, augment_dataset, augment_trajectory
from .curriculum import DEFAULT_STAGES, StageSpec, build_curriculum, stage_of
from .features import FeatureConfig, build_model_sample
from .metrics import GeoBleuParams, dtw_distance, evaluate, geo_bleu
from .model import ModelConfig, MoBERT, build_model, multitask_loss
from .synth import SynthConfig, desk_config, synth_generate
from .training import OptimizerConfig, finetune, predict, train
