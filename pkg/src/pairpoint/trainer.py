"""Optimisation loop: forward both images, sample keypoints, describe, match,
verify with RANSAC (outside the graph), build the reward and minimise the
combined loss with AdamW under a linearly decaying learning rate."""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .backbone import KeypointNet, BackboneConfig, load_checkpoint, read_checkpoint, save_checkpoint
from .config import TrainConfig
from .data import FolderSource, MixedLoader, SyntheticSource, batch_tensor
from .detector import sample_keypoints
from .errors import CheckpointIncompatible, NonFiniteLoss
from .geometry import RansacConfig, filter_matches, mutual_nearest_neighbors
from .objective import (compute_reward, descriptor_loss, inlier_distances, low_prob_regularizer,
                        reinforce_loss, total_loss)

log = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


def derive_seed(*parts):
    """Stable 63-bit seed from integer parts."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(2, np.uint64)[0] >> np.uint64(1))


def learning_rate(cfg, step):
    if cfg.steps == 1:
        return cfg.lr_start
    frac = min(step, cfg.steps - 1) / (cfg.steps - 1)
    return cfg.lr_start + (cfg.lr_end - cfg.lr_start) * frac


def warmup_scale(cfg, step):
    return min(1.0, step / (cfg.warmup_fraction * cfg.steps))


def ransac_config(cfg, seed):
    base = RansacConfig(cfg.ransac_threshold, cfg.ransac_iters, cfg.ransac_confidence, seed)
    return base.scaled(cfg.image_size, cfg.ransac_reference_size)


def build_model_for(cfg, seed=None):
    torch.manual_seed(cfg.seed if seed is None else seed)
    model = KeypointNet(BackboneConfig.from_preset(cfg.preset, descriptor_dim=cfg.descriptor_dim))
    return model.to(DTYPES[cfg.dtype])


def build_loader(cfg):
    sources = {}
    for name in cfg.mix:
        if name in cfg.folders:
            spec = cfg.folders[name]
            sources[name] = FolderSource(spec["root"], spec["manifest"], cfg.image_size)
        else:
            kind = cfg.synthetic_kind if name == "synthetic" else name
            sources[name] = SyntheticSource(kind, cfg.image_size, cfg.warp, cfg.baseline, cfg.jitter)
    return MixedLoader(cfg.mix, sources, cfg.batch_size, cfg.seed, cfg.negative_fraction)


@dataclass
class PairOutcome:
    loss: object  # LossBreakdown
    n_mutual: int
    n_inlier: int
    n_retained: tuple
    label: int


def sample_and_describe(model, heatmaps, pyramid, seeds, m=8):
    """Sample keypoints in every heatmap of a batch and describe them in one gather."""
    kps = [sample_keypoints(hm, m, s) for hm, s in zip(heatmaps, seeds)]
    descs = model.describe_batch(pyramid, [kp.positions for kp in kps])
    return kps, descs


def pair_objective(kp_a, kp_b, d_a, d_b, label, cfg, ransac_seed, warm=1.0):
    """Loss for one pair from its sampled keypoints and their descriptors."""
    ia = torch.nonzero(kp_a.retained).squeeze(1).numpy()
    ib = torch.nonzero(kp_b.retained).squeeze(1).numpy()
    sub_a, sub_b = d_a[ia], d_b[ib]

    with torch.no_grad():
        match = mutual_nearest_neighbors(sub_a.detach().numpy(), sub_b.detach().numpy())
        match = filter_matches(match, kp_a.positions[ia].numpy(), kp_b.positions[ib].numpy(),
                               ransac_config(cfg, ransac_seed))
    reward = compute_reward(match, label, cfg.rho, ia, ib, shape=(len(kp_a), len(kp_b)))
    l_dect = reinforce_loss(kp_a, kp_b, reward)
    if len(reward):
        d_pos, d_hard = inlier_distances(sub_a, sub_b, match.inlier_pairs)
        l_desc = descriptor_loss(d_pos, d_hard, label, cfg.mu)
    else:
        l_desc = d_a.sum() * 0.0
    l_low = low_prob_regularizer([kp_a.retain_prob, kp_b.retain_prob], cfg.eps, warm)
    loss = total_loss(l_dect, l_low, l_desc, cfg.psi)
    return PairOutcome(loss, len(match), len(reward), (len(ia), len(ib)), label)


def batch_objectives(model, images, labels, cfg, seeds, ransac_seeds, warm=1.0):
    """Forward ``images`` = all a-sides then all b-sides; one :class:`PairOutcome` per pair."""
    b = len(labels)
    heatmaps, pyramid = model(images)
    kps, descs = sample_and_describe(model, heatmaps, pyramid, [s[0] for s in seeds] + [s[1] for s in seeds],
                                     cfg.m)
    return [pair_objective(kps[i], kps[b + i], descs[i], descs[b + i], labels[i], cfg, ransac_seeds[i], warm)
            for i in range(b)]


class Trainer:
    def __init__(self, cfg: TrainConfig, model=None, loader=None, out_dir=None):
        self.cfg = cfg
        self.model = model if model is not None else build_model_for(cfg)
        self.loader = loader if loader is not None else build_loader(cfg)
        self.dtype = next(self.model.parameters()).dtype
        self.opt = torch.optim.AdamW(self.model.parameters(), lr=cfg.lr_start, weight_decay=cfg.weight_decay)
        self.step = 0
        self.out_dir = Path(out_dir) if out_dir else None
        self.records = []

    # -- single step -------------------------------------------------------

    def pair_index(self, step, micro, i):
        return (step * self.cfg.accum + micro) * self.cfg.batch_size + i

    def micro_batch(self, step, micro, scale):
        cfg = self.cfg
        indices = [self.pair_index(step, micro, i) for i in range(cfg.batch_size)]
        pairs = [self.loader.sample(i) for i in indices]
        images = batch_tensor([p.image_a for p in pairs] + [p.image_b for p in pairs], self.dtype)
        seeds = [(derive_seed(cfg.seed, idx, 0), derive_seed(cfg.seed, idx, 1)) for idx in indices]
        outcomes = batch_objectives(self.model, images, [p.label for p in pairs], cfg, seeds,
                                    [derive_seed(cfg.seed, idx, 2) for idx in indices], warmup_scale(cfg, step))
        total = 0.0
        records = []
        for idx, pair, out in zip(indices, pairs, outcomes):
            rec = {"step": step, "pair": idx, **out.loss.as_floats(), "n_mutual": out.n_mutual,
                   "n_inlier": out.n_inlier, "label": pair.label}
            if not math.isfinite(rec["total"]):
                raise NonFiniteLoss(step, [idx], rec)
            records.append(rec)
            total = total + out.loss.total
        (total * scale).backward()
        return records

    def train_step(self):
        cfg, step = self.cfg, self.step
        lr = learning_rate(cfg, step)
        for group in self.opt.param_groups:
            group["lr"] = lr
        self.opt.zero_grad(set_to_none=True)
        scale = 1.0 / (cfg.batch_size * cfg.accum)
        records = []
        for micro in range(cfg.accum):
            records += self.micro_batch(step, micro, scale)
        grads_ok = all(p.grad is None or torch.isfinite(p.grad).all() for p in self.model.parameters())
        if not grads_ok:
            raise NonFiniteLoss(step, [r["pair"] for r in records])
        self.opt.step()
        for r in records:
            r["lr"] = lr
        self.step += 1
        return records

    # -- loop ----------------------------------------------------------------

    def run(self, stop_at=None, callback=None):
        """Train until ``cfg.steps`` (or ``stop_at``); returns this run's records."""
        end = self.cfg.steps if stop_at is None else min(stop_at, self.cfg.steps)
        log_fh = None
        if self.out_dir:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            # a fresh run starts a new log; a resumed one continues it
            log_fh = open(self.out_dir / "metrics.jsonl", "a" if self.step else "w", encoding="utf-8")
        try:
            while self.step < end:
                recs = self.train_step()
                self.records += recs
                if log_fh and (self.step % self.cfg.log_every == 0 or self.step == end):
                    for r in recs:
                        log_fh.write(json.dumps(r) + "\n")
                    log_fh.flush()
                if self.out_dir and self.cfg.checkpoint_every and self.step % self.cfg.checkpoint_every == 0:
                    self.save(self.out_dir / f"step_{self.step:06d}.ckpt")
                if callback:
                    callback(self.step, recs)
        finally:
            if log_fh:
                log_fh.close()
        if self.out_dir:
            self.save(self.out_dir / "last.ckpt")
        return self.records

    # -- checkpoints ---------------------------------------------------------

    def save(self, path):
        extra = {
            "step": self.step,
            "train_config": json.dumps(self.cfg.to_dict(), sort_keys=True),
            "train_hash": self.cfg.digest(),
            "optimizer": self.opt.state_dict(),
        }
        save_checkpoint(path, self.model, extra)

    @classmethod
    def resume(cls, path, cfg, loader=None, out_dir=None):
        payload = read_checkpoint(path)
        extra = payload["extra"]
        if extra.get("train_hash") != cfg.digest():
            raise CheckpointIncompatible("training configuration differs from the checkpoint")
        model = KeypointNet(BackboneConfig(**payload["config"])).to(DTYPES[cfg.dtype])
        load_checkpoint(path, model)
        trainer = cls(cfg, model, loader, out_dir)
        trainer.opt.load_state_dict(extra["optimizer"])
        trainer.step = int(extra["step"])
        return trainer


def train(cfg, loader=None, model=None, out_dir=None, stop_at=None):
    trainer = Trainer(cfg, model, loader, out_dir)
    trainer.run(stop_at)
    return trainer
