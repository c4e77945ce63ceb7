import json

import pytest
import torch

from pairpoint.config import build_config
from pairpoint.errors import CheckpointIncompatible, NonFiniteLoss
from pairpoint.trainer import Trainer, batch_objectives, derive_seed, learning_rate, ransac_config, warmup_scale
from pairpoint.data import batch_tensor


def small(*extra):
    return build_config(None, ["image_size=32", "steps=6", "batch_size=2", "ransac_iters=200", *extra])


def test_learning_rate_schedule():
    cfg = build_config(None, ["steps=2000"])
    assert learning_rate(cfg, 0) == cfg.lr_start
    assert learning_rate(cfg, 1999) == pytest.approx(cfg.lr_end, rel=1e-12)
    rates = [learning_rate(cfg, s) for s in range(2000)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))
    assert learning_rate(cfg, 1000) == pytest.approx(cfg.lr_start + (cfg.lr_end - cfg.lr_start) * 1000 / 1999)


def test_warmup_scale():
    cfg = build_config(None, ["steps=600"])
    assert warmup_scale(cfg, 0) == 0.0
    assert warmup_scale(cfg, 100) == pytest.approx(0.5)
    assert warmup_scale(cfg, 200) == 1.0 and warmup_scale(cfg, 599) == 1.0


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(0, 5, 1) == derive_seed(0, 5, 1)
    assert len({derive_seed(0, i, s) for i in range(50) for s in range(3)}) == 150


def flat_grad(model):
    return torch.cat([(p.grad if p.grad is not None else torch.zeros_like(p)).flatten()
                      for p in model.parameters()])


def test_accumulation_matches_full_batch():
    full = Trainer(small("dtype=float64", "image_size=96", "batch_size=4", "accum=1"))
    split = Trainer(small("dtype=float64", "image_size=96", "batch_size=1", "accum=4"))
    split.model.load_state_dict(full.model.state_dict())
    for trainer in (full, split):
        trainer.opt.zero_grad(set_to_none=True)
        scale = 1.0 / (trainer.cfg.batch_size * trainer.cfg.accum)
        recs = []
        for micro in range(trainer.cfg.accum):
            recs += trainer.micro_batch(5, micro, scale)
        trainer.pairs = [r["pair"] for r in recs]
    assert full.pairs == split.pairs == [20, 21, 22, 23]
    g_full, g_split = flat_grad(full.model), flat_grad(split.model)
    assert g_full.abs().max() > 0
    assert torch.allclose(g_full, g_split, rtol=0, atol=1e-10)


def test_detection_loss_does_not_reach_descriptor_head():
    cfg = small("dtype=float64")
    trainer = Trainer(cfg)
    model = trainer.model
    pairs = [trainer.loader.sample(i) for i in range(2)]
    images = batch_tensor([p.image_a for p in pairs] + [p.image_b for p in pairs], torch.float64)
    outs = batch_objectives(model, images, [1, 1], cfg, [(1, 2), (3, 4)], [5, 6])
    dect = sum(o.loss.l_dect for o in outs)
    if not dect.requires_grad:
        pytest.skip("no reward in this draw")
    dect.backward()
    head = model.head.proj
    assert head.weight.grad is None or head.weight.grad.abs().max() == 0


def test_non_finite_loss_is_reported():
    trainer = Trainer(small("psi=.nan"))
    with pytest.raises(NonFiniteLoss) as exc:
        trainer.run()
    assert exc.value.step == 0


def test_checkpoints_and_metrics(tmp_path):
    cfg = small("checkpoint_every=3")
    trainer = Trainer(cfg, out_dir=tmp_path)
    trainer.run()
    assert {p.name for p in tmp_path.glob("*.ckpt")} == {"step_000003.ckpt", "step_000006.ckpt", "last.ckpt"}
    lines = [json.loads(x) for x in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    assert len(lines) == 6 * 2
    for key in ("step", "pair", "l_dect", "l_low", "l_desc", "total", "n_mutual", "n_inlier", "label", "lr"):
        assert key in lines[0]


def test_resume_rejects_changed_config_and_is_noop_at_end(tmp_path):
    cfg = small()
    Trainer(cfg, out_dir=tmp_path).run()
    with pytest.raises(CheckpointIncompatible):
        Trainer.resume(tmp_path / "last.ckpt", small("batch_size=3"))
    done = Trainer.resume(tmp_path / "last.ckpt", cfg)
    assert done.step == cfg.steps
    assert done.run() == []


def test_ransac_threshold_follows_reference_size():
    assert ransac_config(small(), 0).threshold == pytest.approx(2.0 * 32 / 560)
    assert ransac_config(small("ransac_reference_size=32"), 0).threshold == pytest.approx(2.0)
