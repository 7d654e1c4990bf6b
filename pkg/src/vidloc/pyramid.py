"""Temporal feature pyramids over fused frame tokens.

``vitdet``: cascaded stride-2 convolutions on the last fusion output only.
``fpn``: the same bottom-up path plus 1x1 laterals and a top-down
nearest-neighbour upsample-add. ``none``: a single stride-1 level.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .core import PYRAMID_STYLES, ConfigError, default_ranges


@dataclass
class PyramidFeatures:
    levels: list   # (B, N_l, K) tensors
    masks: list    # (B, N_l) bool
    strides: tuple
    ranges: tuple


def level_of_range(displacements, stride, ranges):
    """Pyramid level (1-based) responsible for a displacement pair.

    ``displacements`` are in units of ``stride``; ranges are in level-1 frame
    units, half-open (lo, hi] except the closed [0, hi] bottom bucket.
    Returns None for a background cell (negative displacement).
    """
    ds, de = displacements
    if ds < 0 or de < 0:
        return None
    m = max(ds, de) * stride
    for lvl, (lo, hi) in enumerate(ranges, start=1):
        if (m > lo or (lvl == 1 and m >= lo)) and m <= hi:
            return lvl
    return None


class Downsample(nn.Module):
    """LayerNorm then a kernel-3 stride-2 temporal conv; output length floor(n/2)."""

    def __init__(self, width):
        super().__init__()
        self.norm = nn.LayerNorm(width)
        self.conv = nn.Conv1d(width, width, 3, stride=2)

    def forward(self, x, mask):
        n = x.shape[1]
        h = self.norm(x) * mask[..., None].to(x.dtype)
        h = F.pad(h.transpose(1, 2), (1, 1), mode="replicate")
        h = self.conv(h)[..., : n // 2].transpose(1, 2)
        m = mask[:, 0 : 2 * (n // 2) : 2]
        return h * m[..., None].to(h.dtype), m

    def set_averaging(self):
        with torch.no_grad():
            self.conv.weight.zero_()
            eye = torch.eye(self.conv.weight.shape[0])
            for k in range(3):
                self.conv.weight[:, :, k] = eye / 3
            self.conv.bias.zero_()


class FeaturePyramid(nn.Module):
    def __init__(self, width, n_levels=4, style="vitdet", ranges=None):
        super().__init__()
        if style not in PYRAMID_STYLES:
            raise ConfigError(f"unknown pyramid style {style!r}")
        if style == "none":
            n_levels = 1
        self.style, self.n_levels = style, n_levels
        self.ranges = tuple(ranges) if ranges is not None else default_ranges(n_levels)
        if len(self.ranges) != n_levels:
            raise ConfigError(f"{len(self.ranges)} ranges for {n_levels} levels")
        self.down = nn.ModuleList(Downsample(width) for _ in range(n_levels - 1))
        if style == "fpn":
            self.lateral = nn.ModuleList(nn.Conv1d(width, width, 1) for _ in range(n_levels))

    @property
    def strides(self):
        return tuple(2 ** i for i in range(self.n_levels))

    def forward(self, x, mask, n_levels=None) -> PyramidFeatures:
        n_levels = self.n_levels if n_levels is None else min(n_levels, self.n_levels)
        if x.shape[1] < 2 ** (n_levels - 1):
            raise ConfigError(f"{x.shape[1]} frames too few for {n_levels} levels")
        mask = mask.bool()
        levels, masks = [x * mask[..., None].to(x.dtype)], [mask]
        for lvl in range(1, n_levels):
            h, m = self.down[lvl - 1](levels[-1], masks[-1])
            levels.append(h)
            masks.append(m)
        if self.style == "fpn":
            lat = [self.lateral[i](f.transpose(1, 2)).transpose(1, 2) for i, f in enumerate(levels)]
            out = [lat[-1]]
            for i in range(n_levels - 2, -1, -1):
                up = out[0].repeat_interleave(2, dim=1)
                n = lat[i].shape[1]
                if up.shape[1] < n:
                    up = F.pad(up.transpose(1, 2), (0, n - up.shape[1]), mode="replicate").transpose(1, 2)
                out.insert(0, lat[i] + up[:, :n])
            levels = [o * m[..., None].to(o.dtype) for o, m in zip(out, masks)]
        return PyramidFeatures(levels, masks, self.strides[:n_levels], self.ranges[:n_levels])


def build_pyramid(x, style, params=None, n_levels=4, mask=None, ranges=None) -> PyramidFeatures:
    """Functional wrapper: ``x`` is (N, K) or (B, N, K)."""
    single = x.dim() == 2
    if single:
        x = x[None]
    if mask is None:
        mask = torch.ones(x.shape[:2], dtype=torch.bool)
    elif single:
        mask = mask[None]
    if params is None:
        params = FeaturePyramid(x.shape[-1], n_levels, style, ranges)
    if style == "none":
        n_levels = 1
    if x.shape[1] < 2 ** (n_levels - 1):
        raise ConfigError(f"{x.shape[1]} frames too few for {n_levels} levels")
    out = params(x, mask)
    if single:
        out = PyramidFeatures([l[0] for l in out.levels], [m[0] for m in out.masks], out.strides, out.ranges)
    return out


def total_cells(n_frames, n_levels):
    return sum(n_frames // 2 ** i for i in range(n_levels))

