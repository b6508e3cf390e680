"""
Inside the location model
=========================

Build one training sample, push it through the model, and look at the three
losses and the attention maps.
"""

import torch

from mobcurriculum.features import DIRECTIONS, FeatureConfig, ID_COLUMNS, build_model_sample
from mobcurriculum.model import ModelConfig, batch_loss, build_model, collate
from mobcurriculum.synth import desk_config, synth_generate

res = synth_generate(desk_config(5, seed=3))
ds = res.dataset
fc = FeatureConfig(timedelta_cap=8)
sample = build_model_sample(ds.trajectories["1"], ds.poi, fc, observe_days=15, horizon_days=2,
                            grid=ds.grid, time=ds.time)
print("tokens:", len(sample), "of which masked targets:", sample.num_targets)
print("id columns:", ID_COLUMNS)
print("last observed token:", sample.ids[~sample.target][-1].tolist())
print("first target token:", sample.ids[sample.target][0].tolist(), "(location replaced by the mask id 400)")
first = sample.target.argmax()
print("its labels: cell", sample.loc_label[first], "distance class", sample.dist_label[first],
      "heading", DIRECTIONS[sample.dir_label[first]])

cfg = ModelConfig.for_data(ds.grid, ds.time, timedelta_cap=8)
model = build_model(cfg)
print(sum(p.numel() for p in model.parameters()), "parameters")

batch = collate([sample])
parts = batch_loss(model, batch)
print(f"untrained: loc {parts.loc.item():.3f} (ln 400 = {torch.log(torch.tensor(400.0)).item():.3f}), "
      f"dist {parts.dist.item():.3f}, dir {parts.dir.item():.3f}, total {parts.total.item():.3f}")

model.eval()
model.debug(True)
with torch.no_grad():
    model(batch.ids, batch.poi, batch.pad)
maps = model.attention_maps()
print("attention maps per layer:", [tuple(m.shape) for m in maps])
