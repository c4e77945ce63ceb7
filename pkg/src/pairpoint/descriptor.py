"""Hyper-column descriptors: bilinear lookups in every encoder level,
concatenated shallowest first and projected by a 1x1 (per-keypoint linear) map.

Descriptors are left unnormalised; matching works on raw L2 distances.
"""

import torch
from torch import nn

from .errors import OutOfBounds, ShapeError


def _taps(pts, stride, hh, ww):
    """Flat indices (4C,) and weights (4, C, 1) of the four neighbours of each point."""
    full_w, full_h = ww * stride, hh * stride
    if len(pts) and (
        (pts[:, 0] < -1).any() or (pts[:, 0] > full_w + 1).any()
        or (pts[:, 1] < -1).any() or (pts[:, 1] > full_h + 1).any()
    ):
        raise OutOfBounds(f"points outside the {full_w}x{full_h} image by more than 1 px")
    u = (pts[:, 0] / stride - 0.5).clamp(0, ww - 1)
    v = (pts[:, 1] / stride - 0.5).clamp(0, hh - 1)
    x0 = u.detach().floor().long().clamp(max=max(ww - 2, 0))
    y0 = v.detach().floor().long().clamp(max=max(hh - 2, 0))
    x1 = (x0 + 1).clamp(max=ww - 1)
    y1 = (y0 + 1).clamp(max=hh - 1)
    wx = (u - x0.to(u.dtype)).unsqueeze(1)
    wy = (v - y0.to(v.dtype)).unsqueeze(1)
    idx = torch.cat([y0 * ww + x0, y0 * ww + x1, y1 * ww + x0, y1 * ww + x1])
    weights = torch.stack([(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy])
    return idx, weights


def bilinear_sample(fmap, pts, stride=1):
    """Sample ``fmap`` (ch, H', W') at full-resolution pixel coordinates ``pts`` (C, 2).

    Level coordinates follow the pixel-centre convention ``x / stride - 0.5``
    (``pts`` already carry the +0.5 centre offset) and are clamped to the grid.
    """
    return bilinear_sample_batch(fmap[None], [pts], stride)[0]


def bilinear_sample_batch(fmaps, pts_list, stride=1):
    """:func:`bilinear_sample` for a batch ``(B, ch, H', W')`` with one point set per image.

    All lookups go through a single gather so the backward pass is one scatter
    into the batch tensor instead of one per image and neighbour.
    """
    b, ch, hh, ww = fmaps.shape
    table = fmaps.permute(0, 2, 3, 1).reshape(b * hh * ww, ch)
    taps = [_taps(pts.to(fmaps.dtype), stride, hh, ww) for pts in pts_list]
    idx = torch.cat([t[0] + i * hh * ww for i, t in enumerate(taps)])
    gathered = table[idx]
    out, offset = [], 0
    for pts, (_, weights) in zip(pts_list, taps):
        n = len(pts)
        corners = gathered[offset:offset + 4 * n].reshape(4, n, ch)
        out.append((weights * corners).sum(0))
        offset += 4 * n
    return out


def raw_hypercolumn(pyramid, pts, strides):
    """Concatenate per-level samples: (C, sum of channels)."""
    if len(pyramid) != len(strides):
        raise ShapeError("one stride per pyramid level required")
    return torch.cat([bilinear_sample(f, pts, s) for f, s in zip(pyramid, strides)], dim=1)


def raw_hypercolumn_batch(pyramid, pts_list, strides):
    """Batched :func:`raw_hypercolumn`; ``pyramid`` holds (B, c, h', w') levels."""
    if len(pyramid) != len(strides):
        raise ShapeError("one stride per pyramid level required")
    levels = [bilinear_sample_batch(f, pts_list, s) for f, s in zip(pyramid, strides)]
    return [torch.cat(per_image, dim=1) for per_image in zip(*levels)]


def hypercolumn(pyramid, pts, strides, projection):
    """Hyper-column descriptors ``(C, d)``; ``projection`` is any ``d_hat -> d`` linear module."""
    raw = raw_hypercolumn(pyramid, pts, strides)
    expected = getattr(projection, "in_features", raw.shape[1])
    if raw.shape[1] != expected:
        raise ShapeError(f"projection expects width {expected}, hyper-column has {raw.shape[1]}")
    return projection(raw)


class HyperColumnHead(nn.Module):
    def __init__(self, in_dim, out_dim):
        super().__init__()
        self.proj = nn.Linear(in_dim, out_dim)

    @property
    def raw_dim(self):
        return self.proj.in_features

    @property
    def proj_dim(self):
        return self.proj.out_features

    def forward(self, pyramid, pts, strides):
        return hypercolumn(pyramid, pts, strides, self.proj)

    def forward_batch(self, pyramid, pts_list, strides):
        raws = raw_hypercolumn_batch(pyramid, pts_list, strides)
        if not raws:
            return []
        sizes = [len(r) for r in raws]
        return list(torch.split(self.proj(torch.cat(raws)), sizes))
