"""Keypoint detection from a logit heatmap.

Training samples exactly one location per ``m x m`` cell from the softmax of
the cell's logits and gates it with ``sigmoid(logit)``; inference keeps the
top-k strict local maxima of the heatmap.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ShapeError


@dataclass
class KeypointSet:
    """Per-cell samples. Leading dims are ``(C,)`` or ``(B, C)``."""

    positions: torch.Tensor  # (..., C, 2) x, y at pixel centres
    logits: torch.Tensor  # l_i
    log_cell_prob: torch.Tensor  # log p_hat_i
    retained: torch.Tensor  # bool

    @property
    def acceptance(self):
        return torch.sigmoid(self.logits)

    @property
    def cell_prob(self):
        return self.log_cell_prob.exp()

    @property
    def retain_prob(self):
        return self.acceptance * self.cell_prob

    @property
    def log_retain_prob(self):
        return self.log_cell_prob + F.logsigmoid(self.logits)

    @property
    def log_prob(self):
        """Log-probability of the sampled action: location plus keep/reject decision."""
        gate = torch.where(self.retained, F.logsigmoid(self.logits), F.logsigmoid(-self.logits))
        return self.log_cell_prob + gate

    def __len__(self):
        return self.positions.shape[-2]


@dataclass
class Detections:
    positions: torch.Tensor  # (K, 2)
    scores: torch.Tensor  # (K,) raw logits, non-increasing

    def __len__(self):
        return len(self.scores)


def _generator(seed):
    if isinstance(seed, torch.Generator):
        return seed
    g = torch.Generator()
    g.manual_seed(int(seed))
    return g


def cell_logits(heatmap, m):
    """Reshape ``(B, h, w)`` logits to ``(B, C, m*m)`` in row-major cell order."""
    b, h, w = heatmap.shape
    if m < 2:
        raise ShapeError(f"cell size must be >= 2, got {m}")
    if h % m or w % m:
        raise ShapeError(f"heatmap {h}x{w} is not divisible by cell size {m}; pad first")
    cells = heatmap.reshape(b, h // m, m, w // m, m).permute(0, 1, 3, 2, 4)
    return cells.reshape(b, (h // m) * (w // m), m * m)


def sample_keypoints(heatmap, m=8, seed=0):
    """Sample one keypoint per cell and its retention decision.

    ``heatmap`` is ``(h, w)`` or ``(B, h, w)``; gradients flow into the
    returned logits and log cell probabilities.
    """
    batched = heatmap.dim() == 3
    hm = heatmap if batched else heatmap.unsqueeze(0)
    b, h, w = hm.shape
    cells = cell_logits(hm, m)
    log_softmax = torch.log_softmax(cells, dim=-1)
    g = _generator(seed)
    probs = log_softmax.detach().exp().reshape(-1, m * m).to(torch.float64)
    choice = torch.multinomial(probs, 1, generator=g).reshape(b, -1, 1)
    logits = torch.gather(cells, 2, choice).squeeze(-1)
    log_cell = torch.gather(log_softmax, 2, choice).squeeze(-1)
    u = torch.rand(logits.shape, generator=g, dtype=torch.float64)
    retained = u < torch.sigmoid(logits.detach()).to(torch.float64)

    choice = choice.squeeze(-1)
    n_cols = w // m
    cell_idx = torch.arange(cells.shape[1])
    x = (cell_idx % n_cols) * m + choice % m
    y = (cell_idx // n_cols) * m + torch.div(choice, m, rounding_mode="floor")
    positions = torch.stack([x, y], dim=-1).to(heatmap.dtype) + 0.5
    kp = KeypointSet(positions, logits, log_cell, retained)
    if not batched:
        kp = KeypointSet(*(t.squeeze(0) for t in (kp.positions, kp.logits, kp.log_cell_prob, kp.retained)))
    return kp


def retention_probability(logit, cell_prob):
    """sigmoid(logit) * cell_prob, safe for large |logit|."""
    if isinstance(logit, torch.Tensor):
        return torch.sigmoid(logit) * cell_prob
    if logit >= 0:
        s = 1.0 / (1.0 + np.exp(-logit))
    else:
        e = np.exp(logit)
        s = e / (1.0 + e)
    return float(s * cell_prob)


def nms_mask(heatmap):
    """True where a pixel is strictly greater than all of its existing 8 neighbours."""
    hm = heatmap.detach()
    h, w = hm.shape
    padded = F.pad(hm[None, None], (1, 1, 1, 1), value=float("-inf"))[0, 0]
    neighbours = [padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
                  for dy in (-1, 0, 1) for dx in (-1, 0, 1) if dy or dx]
    return hm > torch.stack(neighbours).amax(dim=0)


def top_k_inference(heatmap, k):
    """Keep the ``k`` highest-logit strict local maxima in a 3x3 window."""
    if k < 1:
        raise ValueError("k must be >= 1")
    hm = heatmap.detach()
    mask = nms_mask(hm).flatten()
    idx = torch.nonzero(mask).squeeze(1)
    scores = hm.flatten()[idx]
    order = torch.sort(scores, descending=True, stable=True).indices[:k]
    idx, scores = idx[order], scores[order]
    w = hm.shape[1]
    pos = torch.stack([idx % w, torch.div(idx, w, rounding_mode="floor")], dim=-1).to(hm.dtype) + 0.5
    return Detections(pos, scores)
