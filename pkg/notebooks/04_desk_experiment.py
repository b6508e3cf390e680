"""
Curriculum against plain training, at desk scale
================================================

A shortened version of the convergence comparison in the acceptance suite:
fewer users and epochs, so it finishes in a couple of minutes on a laptop CPU.
"""

from dataclasses import replace

import numpy as np
import torch

from mobcurriculum.experiments import DeskSettings, convergence_experiment, desk_data, score
from mobcurriculum.training import SampleStore, deterministic_math, train
from mobcurriculum.curriculum import flat_schedule

torch.set_num_threads(1)
settings = replace(DeskSettings(), num_users=200, epochs_per_stage=4)
res = convergence_experiment(seed=0, settings=settings)
print("validation loss per epoch")
print(" curriculum:", np.round(res.curriculum.val_loss, 2).tolist())
print(" baseline:  ", np.round(res.baseline.val_loss, 2).tolist())
print(res.summary())

# Score a plain model on held-out users with GEO-BLEU and DTW.
data = desk_data(settings, seed=0)
cfg = settings.model_config(data.train, seed=0)
with deterministic_math():
    model, _ = train(flat_schedule(data.train, 15, 5), SampleStore(data.train, settings.features(), 15), cfg,
                     settings.optimizer(0))
report = score(model, data.test_samples, data.train.grid.height)
print(f"test users: {len(report.users)}, mean GEO-BLEU {report.mean_geobleu:.4f}, mean DTW {report.mean_dtw:.1f}")
