"""Losses for one labelled image pair.

The detection term is a REINFORCE surrogate: minimising
``-sum_(p,q) (log p_p + log p'_q) * r_pq`` yields the score-function estimate
of the gradient of the expected reward, where ``r`` is a sparse matrix holding
``sign(label) * rho`` at matched, geometrically verified keypoint pairs.
"""

from dataclasses import dataclass

import numpy as np
import torch

from .detector import KeypointSet


def outer_sum(x, y):
    """(x ⊕ y)_ij = x_i + y_j."""
    if isinstance(x, torch.Tensor) or isinstance(y, torch.Tensor):
        return torch.as_tensor(x)[:, None] + torch.as_tensor(y)[None, :]
    return np.asarray(x)[:, None] + np.asarray(y)[None, :]


@dataclass
class RewardMatrix:
    rows: np.ndarray  # keypoint indices in image a
    cols: np.ndarray  # keypoint indices in image b
    values: np.ndarray
    label: int
    shape: tuple

    def __len__(self):
        return len(self.values)

    def dense(self):
        out = np.zeros(self.shape)
        out[self.rows, self.cols] = self.values
        return out

    def transpose(self):
        return RewardMatrix(self.cols, self.rows, self.values, self.label, self.shape[::-1])

    @classmethod
    def empty(cls, label, shape):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, np.zeros(0), label, shape)


def compute_reward(match, label, rho=1.0, index_a=None, index_b=None, shape=None):
    """Reward ``sign(label) * rho`` at every inlier match, zero elsewhere.

    ``index_a``/``index_b`` map positions in the matched (retained) subsets back
    to full keypoint indices. Fewer than eight matches or a missing model give
    an empty reward.
    """
    if label not in (1, -1):
        raise ValueError(f"label must be +1 or -1, got {label}")
    pairs = np.asarray(match.pairs, dtype=np.int64).reshape(-1, 2)
    if shape is None:
        na = len(index_a) if index_a is not None else (pairs[:, 0].max() + 1 if len(pairs) else 0)
        nb = len(index_b) if index_b is not None else (pairs[:, 1].max() + 1 if len(pairs) else 0)
        shape = (int(na), int(nb))
    if len(pairs) < 8 or match.fundamental is None:
        return RewardMatrix.empty(label, shape)
    inl = pairs[np.asarray(match.inlier_mask, dtype=bool)]
    rows, cols = inl[:, 0], inl[:, 1]
    if index_a is not None:
        rows = np.asarray(index_a)[rows]
    if index_b is not None:
        cols = np.asarray(index_b)[cols]
    values = np.full(len(rows), float(np.sign(label)) * rho)
    return RewardMatrix(rows.astype(np.int64), cols.astype(np.int64), values, label, shape)


def _log_prob(kp):
    return kp.log_prob if isinstance(kp, KeypointSet) else kp


def reinforce_loss(kp_a, kp_b, reward):
    """``-sum (log p_p + log p'_q) r_pq`` over the reward support.

    ``kp_a``/``kp_b`` are KeypointSets or tensors of per-keypoint action log-probabilities.
    """
    la, lb = _log_prob(kp_a), _log_prob(kp_b)
    if len(reward) == 0:
        return la.sum() * 0.0
    rows = torch.as_tensor(reward.rows, dtype=torch.long)
    cols = torch.as_tensor(reward.cols, dtype=torch.long)
    vals = torch.as_tensor(reward.values, dtype=la.dtype)
    return -((la[rows] + lb[cols]) * vals).sum()


def descriptor_loss(delta_pos, delta_hard, label, margin=1.0):
    """Hinge on inlier descriptor distances.

    Positive pairs: mean of max(0, margin + d+ - d_h); negative pairs: mean of
    max(0, margin - d+). Empty input gives 0.
    """
    delta_pos = torch.as_tensor(delta_pos)
    if delta_pos.numel() == 0:
        return delta_pos.sum() * 0.0
    if label == 1:
        delta_hard = torch.as_tensor(delta_hard, dtype=delta_pos.dtype)
        arg = margin + delta_pos - delta_hard
    else:
        arg = margin - delta_pos
    return torch.clamp(arg, min=0).mean()


def inlier_distances(desc_a, desc_b, pairs):
    """Distances for matched pairs and their hardest second-nearest neighbour.

    ``pairs`` index rows of ``desc_a`` / ``desc_b`` (the candidate sets that were
    matched). d_h is the smaller of the second-nearest distance seen from either
    side; a side with a single candidate contributes +inf.
    """
    pairs = torch.as_tensor(np.asarray(pairs), dtype=torch.long).reshape(-1, 2)
    if len(pairs) == 0:
        z = desc_a.new_zeros(0)
        return z, z
    p, q = pairs[:, 0], pairs[:, 1]

    def dist(x, y):
        return torch.sqrt(((x[:, None, :] - y[None, :, :]) ** 2).sum(-1) + 1e-12)

    # only the matched rows and columns of the distance matrix are needed
    row = dist(desc_a[p], desc_b)
    col = dist(desc_b[q], desc_a)
    ar = torch.arange(len(p))
    d_pos = row[ar, q]
    inf = torch.tensor(float("inf"), dtype=row.dtype)
    row = row.index_put((ar, q), inf)
    col = col.index_put((ar, p), inf)
    d_hard = torch.minimum(row.min(dim=1).values, col.min(dim=1).values)
    return d_pos, d_hard


def low_prob_regularizer(retain_probs, eps=-7e-8, warmup_scale=1.0):
    """``warmup_scale * |eps| * sum(-log p)`` over all keypoints of both images."""
    if not isinstance(retain_probs, (list, tuple)):
        retain_probs = [retain_probs]
    total = 0.0
    for p in retain_probs:
        p = torch.as_tensor(p, dtype=torch.float64) if not isinstance(p, torch.Tensor) else p
        total = total + (-torch.log(p.clamp(min=1e-12))).sum()
    return warmup_scale * abs(eps) * total


@dataclass
class LossBreakdown:
    l_dect: torch.Tensor
    l_low: torch.Tensor
    l_desc: torch.Tensor
    total: torch.Tensor

    def as_floats(self):
        return {k: float(torch.as_tensor(getattr(self, k)).detach()) for k in ("l_dect", "l_low", "l_desc", "total")}


def total_loss(l_dect, l_low, l_desc, psi=5.0):
    return LossBreakdown(l_dect, l_low, l_desc, l_dect + l_low + psi * l_desc)
