import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from mobcurriculum.features import IGNORE, FeatureConfig
from mobcurriculum.model import (CHANNELS, NUM_DIR, NUM_DIST, Logits, ModelConfig, MoBERT, MultiHeadSelfAttention,
                                 batch_loss, build_model, collate, grad_check, load_checkpoint, multitask_loss,
                                 save_checkpoint)
from mobcurriculum.synth import DESK_GRID, DESK_TIME, desk_config, synth_generate
from mobcurriculum.training import SampleStore


@pytest.fixture(scope="module")
def samples():
    ds = synth_generate(desk_config(6, seed=1)).dataset
    return SampleStore(ds, FeatureConfig(timedelta_cap=8), 15).samples(ds.uids, 2)


def tiny(**kw):
    base = dict(embed_dim=16, num_layers=1, num_heads=2, dropout=0.0, timedelta_cap=8)
    base.update(kw)
    return ModelConfig.for_data(DESK_GRID, DESK_TIME, **base)


def test_attention_matches_torch_reference():
    torch.manual_seed(0)
    attn = MultiHeadSelfAttention(8, 2)
    x = torch.randn(3, 5, 8)
    pad = torch.zeros(3, 5, dtype=torch.bool)
    pad[1, 3:] = True
    ref = torch.nn.MultiheadAttention(8, 2, batch_first=True)
    with torch.no_grad():
        ref.in_proj_weight.copy_(attn.qkv.weight)
        ref.in_proj_bias.copy_(attn.qkv.bias)
        ref.out_proj.weight.copy_(attn.out.weight)
        ref.out_proj.bias.copy_(attn.out.bias)
    ours = attn(x, pad)
    theirs, _ = ref(x, x, x, key_padding_mask=pad, need_weights=False)
    assert torch.allclose(ours, theirs, atol=1e-6)


def test_forward_shapes(samples):
    model = build_model(tiny())
    b = collate(samples[:3])
    out = model(b.ids, b.poi, b.pad)
    n, m = b.ids.shape[:2]
    assert out.loc.shape == (n, m, 400) and out.dist.shape == (n, m, NUM_DIST) and out.dir.shape == (n, m, NUM_DIR)
    assert model.embed_features(b.ids, b.poi).shape == (n, m, len(CHANNELS), 16)


def test_location_head_is_tied():
    model = build_model(tiny())
    assert model.head_loc.embedding is model.emb_loc
    names = [n for n, _ in model.named_parameters()]
    assert "head_loc.embedding.weight" not in names


def test_padding_does_not_change_outputs(samples):
    model = build_model(tiny()).eval()
    short = min(samples, key=len)
    alone = collate([short])
    together = collate([short, max(samples, key=len)])
    a = model(alone.ids, alone.poi, alone.pad).loc[0]
    b = model(together.ids, together.poi, together.pad).loc[0, :len(short)]
    assert torch.allclose(a, b, atol=1e-5)


def test_out_of_vocabulary_rejected(samples):
    model = build_model(tiny())
    b = collate(samples[:1])
    ids = b.ids.clone()
    ids[0, 0, 4] = 9  # timedelta cap is 8
    with pytest.raises(IndexError, match="timedelta"):
        model(ids, b.poi, b.pad)


def test_loss_composition_against_manual_cross_entropy():
    g = torch.Generator().manual_seed(0)
    logits = Logits(torch.randn(2, 5, 7, generator=g), torch.randn(2, 5, 4, generator=g),
                    torch.randn(2, 5, 9, generator=g))
    loc = torch.tensor([[IGNORE, 3, 1, IGNORE, 0], [6, IGNORE, IGNORE, IGNORE, 2]])
    dist = torch.where(loc == IGNORE, loc, loc % 4)
    dirs = torch.where(loc == IGNORE, loc, (loc * 2) % 9)
    out = multitask_loss(logits, loc, dist, dirs, 0.5, 0.8)

    def manual(lg, lab):
        terms = [-F.log_softmax(lg[i, j], -1)[lab[i, j]] for i in range(2) for j in range(5) if lab[i, j] != IGNORE]
        return sum(terms) / len(terms)

    assert out.loc.item() == pytest.approx(manual(logits.loc, loc).item(), rel=1e-6)
    assert out.total.item() == pytest.approx(out.loc.item() + 0.5 * out.dist.item() + 0.8 * out.dir.item(), rel=1e-6)


def test_loss_requires_labels():
    z = torch.zeros(1, 2, 3)
    lab = torch.full((1, 2), IGNORE)
    with pytest.raises(ValueError):
        multitask_loss(Logits(z, torch.zeros(1, 2, 4), torch.zeros(1, 2, 9)), lab, lab, lab, 0.5, 0.8)


def test_lambda_zero_ignores_auxiliary_heads(samples):
    model = build_model(tiny(lambda_dist=0.0, lambda_dir=0.0))
    loss = batch_loss(model, collate(samples[:2])).total
    loss.backward()
    assert model.head_dist.fc1.weight.grad.abs().sum() == 0
    assert model.head_dir.fc2.weight.grad.abs().sum() == 0


def test_config_validation_and_roundtrip():
    with pytest.raises(ValueError):
        tiny(num_heads=3)
    with pytest.raises(ValueError):
        tiny(lambda_dir=1.5)
    cfg = tiny(learned_positions=True)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_init_is_seeded():
    a, b = build_model(tiny(seed=3)), build_model(tiny(seed=3))
    for (n, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
        assert torch.equal(p, q), n
    assert a.emb_loc.weight.std().item() == pytest.approx(0.3, rel=0.1)


def test_grad_check_small(samples):
    model = build_model(tiny(num_heads=1), dtype=torch.float64)
    rep = grad_check(model, collate(samples[:2]), num_params=60)
    assert rep.max_rel_error < 1e-4
    assert {"emb_loc", "emb_poi", "emb_reserved", "interaction", "blocks", "head_loc", "head_dist",
            "head_dir"} <= set(rep.per_group)


class _ScaleGrad(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        return x.view_as(x)

    @staticmethod
    def backward(ctx, g):
        return 1.5 * g


def test_grad_check_detects_wrong_gradient(samples, monkeypatch):
    # corrupt the backward pass of every FFN input while leaving the forward pass intact
    import mobcurriculum.model as M
    orig = M.FeedForward.forward
    monkeypatch.setattr(M.FeedForward, "forward", lambda self, x: orig(self, _ScaleGrad.apply(x)))
    model = build_model(tiny(num_heads=1), dtype=torch.float64)
    rep = grad_check(model, collate(samples[:2]), num_params=60)
    assert rep.max_rel_error > 1e-2


def test_attention_debug_maps(samples):
    model = build_model(tiny()).eval()
    model.debug(True)
    b = collate(samples[:2])
    model(b.ids, b.poi, b.pad)
    maps = model.attention_maps()
    assert len(maps) == 1 and maps[0].shape[:2] == (2, 2)
    assert torch.allclose(maps[0].sum(-1), torch.ones_like(maps[0].sum(-1)))


def test_checkpoint_roundtrip(tmp_path, samples):
    model = build_model(tiny(seed=4)).eval()
    save_checkpoint(model, tmp_path / "m.pt")
    again = load_checkpoint(tmp_path / "m.pt").eval()
    b = collate(samples[:2])
    assert torch.equal(model(b.ids, b.poi, b.pad).loc, again(b.ids, b.poi, b.pad).loc)
    torch.save({"format": "other"}, tmp_path / "bad.pt")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.pt")
